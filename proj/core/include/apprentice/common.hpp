#pragma once

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace apprentice {

// Config / usage errors map to CLI exit code 2; everything else is a
// runtime failure (exit code 1).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

namespace detail {

inline void cat_one(std::ostringstream&) {}

template <typename T, typename... Rest>
void cat_one(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    cat_one(os, rest...);
}

} // namespace detail

template <typename... Args>
std::string cat(const Args&... args) {
    std::ostringstream os;
    detail::cat_one(os, args...);
    return os.str();
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

// When on, every primitive checks its output for NaN/Inf. Off by default;
// tests and debug runs flip it.
inline bool& validation_mode() {
    static bool on = false;
    return on;
}

} // namespace apprentice
