#ifndef FAVAE_ERRORS_HPP
#define FAVAE_ERRORS_HPP

#include <sstream>
#include <stdexcept>
#include <string>

namespace favae {

// Base for all library errors. CLI maps subtypes to exit codes.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape / axis problems (odd image sizes, mismatched operands, ...).
struct DimensionError : Error {
    using Error::Error;
};

// Operation applied in the wrong object state (double normalization, ...).
struct StateError : Error {
    using Error::Error;
};

// Bad argument value (empty sequence, cutoff out of range, ...).
struct ArgumentError : Error {
    using Error::Error;
};

// Problems with input data (empty dataset, undecodable file, ...).
struct DataError : Error {
    using Error::Error;
};

// Invalid configuration combinations.
struct ConfigError : Error {
    using Error::Error;
};

// Numerical failure mid-run (NaN loss, non-PSD matrix, ...).
struct NumericError : Error {
    using Error::Error;
};

namespace detail {
inline void msg_append(std::ostringstream&) {}
template <typename T, typename... Rest>
void msg_append(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    msg_append(os, rest...);
}
}  // namespace detail

// msg("conv2d: got ", a, " expected ", b) -> std::string
template <typename... Args>
std::string msg(const Args&... args) {
    std::ostringstream os;
    detail::msg_append(os, args...);
    return os.str();
}

}  // namespace favae

#endif
