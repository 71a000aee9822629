#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "gaitprint/errors.hpp"

namespace gaitprint::csv {

// Plain comma splitting; none of the formats here quote fields.
inline std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    return s;
}

template <typename T>
T parse_number(std::string_view field, std::size_t line, const char* what) {
    field = trim(field);
    T value{};
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc{} || ptr != field.data() + field.size()) {
        throw ParseError(line, std::string("bad ") + what + " '" + std::string(field) + "'");
    }
    return value;
}

inline void expect_header(std::string_view got, std::string_view want) {
    if (trim(got) != want) {
        throw ParseError(1, "expected header '" + std::string(want) + "', got '" + std::string(trim(got)) + "'");
    }
}

}  // namespace gaitprint::csv
