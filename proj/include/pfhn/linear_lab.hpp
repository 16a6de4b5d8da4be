#pragma once

#include <string>
#include <vector>

#include "pfhn/matrix.hpp"
#include "pfhn/rng.hpp"

namespace pfhn {

// Ridge-free linear regression client with an orthonormal design,
// X^T X = I_d (validated at construction).
struct LinearClientProblem {
    Matrix x;               // m x d
    std::vector<double> y;  // length m

    LinearClientProblem(Matrix x_in, std::vector<double> y_in);
};

struct LinearHN {
    Matrix w;  // d x k
    Matrix v;  // k x n, columns are client coefficient vectors
};

struct OrthonormalInstance {
    std::vector<LinearClientProblem> problems;
    Matrix theta_star;  // d x n ground-truth regressors
};

// X_i from QR orthonormalization of a Gaussian matrix; y_i = X_i theta*_i + noise.
OrthonormalInstance make_orthonormal_problem(std::size_t d, std::size_t m, std::size_t n,
                                             double noise, Rng rng);

// Closed-form per-client solution X^T y.
std::vector<double> erm_orthonormal(const LinearClientProblem& problem);

struct SvdResult {
    Matrix u;                     // m x r, orthonormal columns
    std::vector<double> sigma;    // descending
    Matrix v;                     // n x r, orthonormal columns
};

// One-sided Jacobi SVD; accurate for the small dense matrices used here.
SvdResult jacobi_svd(const Matrix& a);

struct PcaResult {
    Matrix w;  // d x k, orthonormal columns, sign-fixed
    Matrix v;  // k x n coefficients W^T Theta
};

// Uncentered PCA of the stacked regressors (d x n), via SVD.
PcaResult pca_top_k(const Matrix& theta_bar, std::size_t k);

struct AltminResult {
    LinearHN hn;
    std::vector<double> loss_trace;  // objective after each outer iteration
};

// Alternating exact block solves of sum_i ||X_i W v_i - y_i||^2 with
// Tikhonov jitter 1e-10 on each normal-equation block.
AltminResult altmin_linear_hn(const std::vector<LinearClientProblem>& problems, std::size_t k,
                              std::size_t iters, Rng rng);

double bilinear_loss(const std::vector<LinearClientProblem>& problems, const Matrix& w,
                     const Matrix& v);

struct Prop1Report {
    double pca_loss = 0.0;
    double altmin_loss = 0.0;
    double relative_gap = 0.0;
    bool pass = false;
};

// Runs the closed-form ERM -> PCA route and the alternating-minimization
// route and compares the achieved objectives.
Prop1Report prop1_equivalence_report(const std::vector<LinearClientProblem>& problems,
                                     std::size_t k, std::size_t altmin_iters = 200,
                                     std::uint64_t altmin_seed = 1);

std::string prop1_report_json(const Prop1Report& report);

}  // namespace pfhn
