#include "pfhn/linear_lab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "pfhn/errors.hpp"

namespace pfhn {

namespace {
constexpr double kJitter = 1e-10;

// Modified Gram-Schmidt; columns of the result are orthonormal.
Matrix orthonormalize_columns(Matrix a) {
    for (std::size_t j = 0; j < a.cols; ++j) {
        for (std::size_t p = 0; p < j; ++p) {
            double dot = 0.0;
            for (std::size_t i = 0; i < a.rows; ++i) dot += a.at(i, p) * a.at(i, j);
            for (std::size_t i = 0; i < a.rows; ++i) a.at(i, j) -= dot * a.at(i, p);
        }
        double nrm = 0.0;
        for (std::size_t i = 0; i < a.rows; ++i) nrm += a.at(i, j) * a.at(i, j);
        nrm = std::sqrt(nrm);
        if (nrm < 1e-12) throw ValidationError("orthonormalize: rank-deficient matrix");
        for (std::size_t i = 0; i < a.rows; ++i) a.at(i, j) /= nrm;
    }
    return a;
}
}  // namespace

LinearClientProblem::LinearClientProblem(Matrix x_in, std::vector<double> y_in)
    : x(std::move(x_in)), y(std::move(y_in)) {
    if (x.rows != y.size()) throw ShapeError("LinearClientProblem: row/label mismatch");
    const Matrix g = matmul_at_b(x, x);
    for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j) {
            const double want = i == j ? 1.0 : 0.0;
            if (std::fabs(g.at(i, j) - want) > 1e-8)
                throw ValidationError("LinearClientProblem: X^T X deviates from identity");
        }
}

OrthonormalInstance make_orthonormal_problem(std::size_t d, std::size_t m, std::size_t n,
                                             double noise, Rng rng) {
    if (m < d) throw ValidationError("make_orthonormal_problem: need m >= d");
    Rng xr = rng.stream("designs");
    Rng tr = rng.stream("theta_star");
    Rng nr = rng.stream("noise");
    OrthonormalInstance inst;
    inst.theta_star = Matrix(d, n);
    for (double& v : inst.theta_star.data) v = tr.normal();
    for (std::size_t i = 0; i < n; ++i) {
        Matrix g(m, d);
        for (double& v : g.data) v = xr.normal();
        Matrix x = orthonormalize_columns(std::move(g));
        std::vector<double> y(m, 0.0);
        for (std::size_t r = 0; r < m; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += x.at(r, c) * inst.theta_star.at(c, i);
            y[r] = s + noise * nr.normal();
        }
        inst.problems.emplace_back(std::move(x), std::move(y));
    }
    return inst;
}

std::vector<double> erm_orthonormal(const LinearClientProblem& problem) {
    std::vector<double> theta(problem.x.cols, 0.0);
    for (std::size_t r = 0; r < problem.x.rows; ++r)
        for (std::size_t c = 0; c < problem.x.cols; ++c)
            theta[c] += problem.x.at(r, c) * problem.y[r];
    return theta;
}

SvdResult jacobi_svd(const Matrix& a) {
    const bool transposed = a.rows < a.cols;
    Matrix b = transposed ? transpose(a) : a;
    const std::size_t m = b.rows, n = b.cols;
    Matrix v = Matrix::identity(n);

    for (int sweep = 0; sweep < 60; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    app += b.at(i, p) * b.at(i, p);
                    aqq += b.at(i, q) * b.at(i, q);
                    apq += b.at(i, p) * b.at(i, q);
                }
                if (std::fabs(apq) <= 1e-15 * std::sqrt(app * aqq)) continue;
                rotated = true;
                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double bp = b.at(i, p), bq = b.at(i, q);
                    b.at(i, p) = cs * bp - sn * bq;
                    b.at(i, q) = sn * bp + cs * bq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v.at(i, p), vq = v.at(i, q);
                    v.at(i, p) = cs * vp - sn * vq;
                    v.at(i, q) = sn * vp + cs * vq;
                }
            }
        }
        if (!rotated) break;
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> norms(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += b.at(i, j) * b.at(i, j);
        norms[j] = std::sqrt(s);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

    SvdResult res;
    res.sigma.resize(n);
    res.u = Matrix(m, n);
    res.v = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        res.sigma[j] = norms[src];
        for (std::size_t i = 0; i < m; ++i)
            res.u.at(i, j) = norms[src] > 0.0 ? b.at(i, src) / norms[src] : 0.0;
        for (std::size_t i = 0; i < n; ++i) res.v.at(i, j) = v.at(i, src);
    }
    if (transposed) std::swap(res.u, res.v);
    return res;
}

PcaResult pca_top_k(const Matrix& theta_bar, std::size_t k) {
    if (k < 1 || k > std::min(theta_bar.rows, theta_bar.cols))
        throw ValidationError("pca_top_k: k out of range");
    const SvdResult svd = jacobi_svd(theta_bar);
    PcaResult res;
    res.w = Matrix(theta_bar.rows, k);
    for (std::size_t j = 0; j < k; ++j) {
        // first nonzero entry forced non-negative, making W deterministic
        double sign = 1.0;
        for (std::size_t i = 0; i < theta_bar.rows; ++i) {
            if (svd.u.at(i, j) != 0.0) {
                sign = svd.u.at(i, j) > 0.0 ? 1.0 : -1.0;
                break;
            }
        }
        for (std::size_t i = 0; i < theta_bar.rows; ++i) res.w.at(i, j) = sign * svd.u.at(i, j);
    }
    res.v = matmul_at_b(res.w, theta_bar);
    return res;
}

double bilinear_loss(const std::vector<LinearClientProblem>& problems, const Matrix& w,
                     const Matrix& v) {
    double loss = 0.0;
    for (std::size_t i = 0; i < problems.size(); ++i) {
        const auto& pr = problems[i];
        std::vector<double> theta(w.rows, 0.0);
        for (std::size_t a = 0; a < w.rows; ++a)
            for (std::size_t b = 0; b < w.cols; ++b) theta[a] += w.at(a, b) * v.at(b, i);
        for (std::size_t r = 0; r < pr.x.rows; ++r) {
            double pred = 0.0;
            for (std::size_t c = 0; c < pr.x.cols; ++c) pred += pr.x.at(r, c) * theta[c];
            const double e = pred - pr.y[r];
            loss += e * e;
        }
    }
    return loss;
}

AltminResult altmin_linear_hn(const std::vector<LinearClientProblem>& problems, std::size_t k,
                              std::size_t iters, Rng rng) {
    if (problems.empty()) throw ValidationError("altmin_linear_hn: no problems");
    const std::size_t d = problems[0].x.cols;
    const std::size_t n = problems.size();
    if (k < 1 || k > d) throw ValidationError("altmin_linear_hn: k out of range");
    if (iters < 1) throw ValidationError("altmin_linear_hn: iters must be >= 1");

    Rng init = rng.stream("altmin_init");
    Matrix w(d, k);
    for (double& x : w.data) x = init.normal();
    w = orthonormalize_columns(std::move(w));
    Matrix v(k, n);

    std::vector<Matrix> xty(n);  // X_i^T y_i per client
    for (std::size_t i = 0; i < n; ++i) {
        const auto t = erm_orthonormal(problems[i]);
        xty[i] = Matrix(d, 1);
        xty[i].data = t;
    }

    AltminResult res;
    for (std::size_t it = 0; it < iters; ++it) {
        // V block: per-client least squares in the k-dim coefficient space.
        for (std::size_t i = 0; i < n; ++i) {
            const Matrix xw = matmul(problems[i].x, w);  // m x k
            Matrix a = matmul_at_b(xw, xw);
            for (std::size_t j = 0; j < k; ++j) a.at(j, j) += kJitter;
            std::vector<double> rhs(k, 0.0);
            for (std::size_t r = 0; r < xw.rows; ++r)
                for (std::size_t j = 0; j < k; ++j) rhs[j] += xw.at(r, j) * problems[i].y[r];
            const auto vi = solve_linear(std::move(a), std::move(rhs));
            for (std::size_t j = 0; j < k; ++j) v.at(j, i) = vi[j];
        }
        // W block: stacked least squares over vec(W), dimension d*k.
        Matrix m(d * k, d * k);
        std::vector<double> rhs(d * k, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const Matrix g = matmul_at_b(problems[i].x, problems[i].x);  // d x d
            for (std::size_t a = 0; a < d; ++a) {
                for (std::size_t c = 0; c < d; ++c) {
                    const double gac = g.at(a, c);
                    if (gac == 0.0) continue;
                    for (std::size_t b = 0; b < k; ++b)
                        for (std::size_t e = 0; e < k; ++e)
                            m.at(a * k + b, c * k + e) += gac * v.at(b, i) * v.at(e, i);
                }
                for (std::size_t b = 0; b < k; ++b) rhs[a * k + b] += xty[i].at(a, 0) * v.at(b, i);
            }
        }
        for (std::size_t j = 0; j < d * k; ++j) m.at(j, j) += kJitter;
        const auto wv = solve_linear(std::move(m), std::move(rhs));
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < k; ++b) w.at(a, b) = wv[a * k + b];

        res.loss_trace.push_back(bilinear_loss(problems, w, v));
    }
    res.hn = LinearHN{std::move(w), std::move(v)};
    return res;
}

Prop1Report prop1_equivalence_report(const std::vector<LinearClientProblem>& problems,
                                     std::size_t k, std::size_t altmin_iters,
                                     std::uint64_t altmin_seed) {
    if (problems.empty()) throw ValidationError("prop1_equivalence_report: no problems");
    const std::size_t d = problems[0].x.cols;
    Matrix theta_bar(d, problems.size());
    for (std::size_t i = 0; i < problems.size(); ++i) {
        const auto t = erm_orthonormal(problems[i]);
        for (std::size_t a = 0; a < d; ++a) theta_bar.at(a, i) = t[a];
    }
    const PcaResult pca = pca_top_k(theta_bar, k);
    const AltminResult alt = altmin_linear_hn(problems, k, altmin_iters, Rng(altmin_seed));

    Prop1Report rep;
    rep.pca_loss = bilinear_loss(problems, pca.w, pca.v);
    rep.altmin_loss = alt.loss_trace.back();
    rep.relative_gap = std::fabs(rep.altmin_loss - rep.pca_loss) / std::max(rep.pca_loss, 1e-9);
    rep.pass = rep.relative_gap <= 1e-6;
    return rep;
}

std::string prop1_report_json(const Prop1Report& report) {
    nlohmann::json j = {{"pca_loss", report.pca_loss},
                        {"altmin_loss", report.altmin_loss},
                        {"relative_gap", report.relative_gap},
                        {"pass", report.pass}};
    return j.dump(2);
}

}  // namespace pfhn
