#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace skincnn {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <typename... Args>
std::string cat(Args&&... args)
{
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

#define SKINCNN_CHECK(cond, ...) \
    do { \
        if (!(cond)) \
            throw ::skincnn::Error(::skincnn::cat(__VA_ARGS__)); \
    } while (0)

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s)
{
    std::size_t n = 1;
    for (auto d : s)
        n *= d;
    return n;
}

inline std::string shape_str(const Shape& s)
{
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i)
            out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

} // namespace skincnn
