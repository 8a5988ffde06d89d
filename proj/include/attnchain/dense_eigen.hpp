#pragma once

// Eigenvalues of small dense real matrices: Householder reduction to upper
// Hessenberg form followed by the Francis double-shift QR iteration.

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace attnchain::dense {

// Reduces the row-major n x n matrix `a` in place to upper Hessenberg form by
// an orthogonal similarity. Entries below the subdiagonal are set to zero.
void hessenberg_reduce(std::size_t n, std::span<double> a);

// Eigenvalues of an upper Hessenberg matrix (destroyed). Throws
// kConvergenceFailure if an eigenvalue does not deflate.
std::vector<std::complex<double>> hessenberg_eigenvalues(std::size_t n,
                                                         std::span<double> h);

// All eigenvalues of a general real matrix, ordered by descending modulus.
// Ties in modulus keep the order in which QR deflated them.
std::vector<std::complex<double>> eigenvalues(std::size_t n,
                                              std::span<const double> a);

// Solves the n x n system a x = b with partial pivoting. Throws
// kConvergenceFailure on an exactly singular pivot.
std::vector<double> solve(std::size_t n, std::vector<double> a,
                          std::vector<double> b);

}  // namespace attnchain::dense
