#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace defemb {

// Thrown for invalid inputs, malformed files and diverged runs. The CLI maps
// Kind to its documented exit codes (usage -> 2, everything else -> 1).
class Error : public std::runtime_error {
public:
    enum class Kind { usage, runtime };

    Error(Kind kind, std::string msg) : std::runtime_error(std::move(msg)), kind_(kind) {}

    static Error usage(std::string msg) { return Error(Kind::usage, std::move(msg)); }
    static Error runtime(std::string msg) { return Error(Kind::runtime, std::move(msg)); }

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

}  // namespace defemb
