#pragma once

#include <stdexcept>
#include <string>

namespace dispatch {

// Base of every error raised by the library. `module()` names the subsystem
// that failed so the CLI can produce a useful diagnostic.
class Error : public std::runtime_error {
public:
    Error(std::string module, const std::string& what)
        : std::runtime_error(what), module_(std::move(module)) {}

    const std::string& module() const noexcept { return module_; }

private:
    std::string module_;
};

}  // namespace dispatch
