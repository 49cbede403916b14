#pragma once

#include <stdexcept>
#include <string>

namespace dyncond {

// Each kind maps to a distinct failure class in the CLI report.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "error"; }
};

#define DYNCOND_ERROR(Name, tag)                                   \
    struct Name : Error {                                          \
        using Error::Error;                                        \
        const char* kind() const noexcept override { return tag; } \
    };

DYNCOND_ERROR(ConfigError, "config")
DYNCOND_ERROR(DomainError, "domain")
DYNCOND_ERROR(ResourceError, "resource")
DYNCOND_ERROR(NumericError, "numeric")
DYNCOND_ERROR(ModelError, "model")
DYNCOND_ERROR(InternalError, "internal")
DYNCOND_ERROR(Unsupported, "unsupported")

#undef DYNCOND_ERROR

template <class E = ConfigError>
inline void require(bool ok, const std::string& msg) {
    if (!ok) throw E(msg);
}

} // namespace dyncond
