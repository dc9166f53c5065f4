#ifndef BHKLE_ERRORS_HPP
#define BHKLE_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace bhkle {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input data: tables, CSV rows, candidate lists. index() is the
// offending row/sample, or -1 when the whole input is at fault.
class InputError : public Error {
public:
    explicit InputError(const std::string& what, std::ptrdiff_t index = -1)
        : Error(what), index_(index) {}
    std::ptrdiff_t index() const noexcept { return index_; }

private:
    std::ptrdiff_t index_;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

class GeometryError : public Error {
public:
    using Error::Error;
};

class LocationError : public Error {
public:
    LocationError(const std::string& what, double x, double y)
        : Error(what), x_(x), y_(y) {}
    double x() const noexcept { return x_; }
    double y() const noexcept { return y_; }

private:
    double x_, y_;
};

// Newton iteration did not reach its tolerance. Carries the relative
// residual after every step.
class DivergenceError : public NumericalError {
public:
    DivergenceError(const std::string& what, std::vector<double> history)
        : NumericalError(what), history_(std::move(history)) {}
    const std::vector<double>& history() const noexcept { return history_; }

private:
    std::vector<double> history_;
};

class ModelError : public Error {
public:
    using Error::Error;
};

class IdentificationError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace bhkle

#endif // BHKLE_ERRORS_HPP
