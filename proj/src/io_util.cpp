#include "traingate/io_util.hpp"

#include <charconv>
#include <cmath>
#include <stdexcept>
#include <system_error>

#include "traingate/errors.hpp"

namespace traingate {

std::string format_double(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    if (ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
    return std::string(buf, ptr);
}

double parse_double(const std::string& field) {
    if (field == "nan") return std::nan("");
    if (field == "inf") return INFINITY;
    if (field == "-inf") return -INFINITY;
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size())
        throw ParseError("cannot parse number \"" + field + "\"");
    return value;
}

void ensure_parent_dir(const std::filesystem::path& path) {
    const auto parent = path.parent_path();
    if (parent.empty()) return;
    std::error_code ec;
    std::filesystem::create_directories(parent, ec);
    if (ec) throw IoError("cannot create directory " + parent.string() + ": " + ec.message());
}

}  // namespace traingate
