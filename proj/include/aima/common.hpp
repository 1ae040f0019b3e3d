#pragma once

#include <stdexcept>
#include <string>

namespace aima {

// Error classes surfaced by the CLI as one-line machine-parsable failures.
enum class ErrorClass { usage, io, format, domain, config, internal };

inline const char* error_class_name(ErrorClass c) {
    switch (c) {
        case ErrorClass::usage: return "usage";
        case ErrorClass::io: return "io";
        case ErrorClass::format: return "format";
        case ErrorClass::domain: return "domain";
        case ErrorClass::config: return "config";
        case ErrorClass::internal: return "internal";
    }
    return "internal";
}

class Error : public std::runtime_error {
public:
    Error(ErrorClass cls, const std::string& msg) : std::runtime_error(msg), cls_(cls) {}
    ErrorClass cls() const { return cls_; }

private:
    ErrorClass cls_;
};

[[noreturn]] inline void fail(ErrorClass cls, const std::string& msg) { throw Error(cls, msg); }
[[noreturn]] inline void fail_domain(const std::string& msg) { fail(ErrorClass::domain, msg); }
[[noreturn]] inline void fail_io(const std::string& msg) { fail(ErrorClass::io, msg); }
[[noreturn]] inline void fail_format(const std::string& msg) { fail(ErrorClass::format, msg); }
[[noreturn]] inline void fail_config(const std::string& msg) { fail(ErrorClass::config, msg); }

inline void require(bool cond, ErrorClass cls, const std::string& msg) {
    if (!cond) fail(cls, msg);
}

}  // namespace aima
