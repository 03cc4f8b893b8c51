#pragma once

#include <stdexcept>
#include <string>

namespace conjassess {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Collinear position/velocity with nonzero miss distance, zero speed, or
/// any other configuration for which the spherical parametrization breaks down.
struct DegenerateGeometry : Error {
    using Error::Error;
};

/// Quadrature refinement hit its node cap, an eigensolver failed, or a
/// sanity check on computed quantities was violated.
struct NumericalFailure : Error {
    using Error::Error;
};

/// Profile optimiser did not reach the gradient tolerance. Carries the best
/// iterate's log-likelihood and gradient norm so callers can diagnose or retry.
struct NonConvergence : Error {
    NonConvergence(const std::string& what, double best_loglik_, double grad_norm_,
                   int iterations_)
        : Error(what), best_loglik(best_loglik_), grad_norm(grad_norm_),
          iterations(iterations_) {}
    double best_loglik;
    double grad_norm;
    int iterations;
};

struct SingularInformation : Error {
    using Error::Error;
};

/// Profile log-likelihood exceeds the overall maximum; signals optimiser failure.
struct InvalidProfile : Error {
    using Error::Error;
};

/// Modified root requested inside the exclusion window around the MLE.
struct Indeterminate : Error {
    using Error::Error;
};

struct OutOfRange : Error {
    using Error::Error;
};

struct InvalidLosses : Error {
    using Error::Error;
};

/// Malformed or inconsistent user input (files, configs).
struct ValidationError : Error {
    using Error::Error;
};

} // namespace conjassess
