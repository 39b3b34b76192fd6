#pragma once

#include <filesystem>
#include <string>

namespace traingate {

// Shortest decimal string that round-trips the double exactly ("nan"/"inf"
// spelled out). Used everywhere a float reaches a CSV so outputs are
// byte-stable across runs.
std::string format_double(double value);

double parse_double(const std::string& field);

void ensure_parent_dir(const std::filesystem::path& path);

}  // namespace traingate
