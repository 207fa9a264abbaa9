#pragma once

#include <cstdint>

namespace confopt {

// Regularized lower incomplete gamma P(a, x) = gamma(a, x) / Gamma(a).
double gammp(double a, double x);

// d/da P(a, x) by central difference; used for the implicit
// reparameterization gradient of Gamma draws.
double gammp_da(double a, double x);

// Gamma(a, 1) density at x.
double gamma_pdf(double a, double x);

// Inverse of P(a, .) by bisection; test oracle for the implicit gradient.
double inv_gammp(double a, double p);

// Implicit reparameterization: dz/da for z ~ Gamma(a, 1) at realized z,
// i.e. -dP/da / pdf evaluated at (a, z).
double gamma_implicit_grad(double a, double z);

}  // namespace confopt
