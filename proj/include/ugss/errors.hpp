#ifndef UGSS_ERRORS_HPP
#define UGSS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace ugss {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Type-invariant violation; the message starts with the offending field.
class ValidationError : public Error {
public:
    ValidationError(const std::string& field, const std::string& what)
        : Error(field + ": " + what), field_(field) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ChecksumError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class LandmarkError : public Error {
public:
    using Error::Error;
};

}  // namespace ugss

#endif  // UGSS_ERRORS_HPP
