#include "qkck/qalg.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>

namespace qkck {

Metric Metric::from_matrix(const Mat& m) {
    if (m.rows() != m.cols()) throw std::invalid_argument("metric must be square");
    double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw std::invalid_argument("metric must be symmetric");
    Metric g;
    g.g = 0.5 * (m + m.transpose());
    Eigen::LLT<Mat> llt(g.g);
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument("metric must be positive definite");
    g.g_inv = llt.solve(Mat::Identity(m.rows(), m.cols()));
    // Columns of L^{-T} form a g-orthonormal frame.
    Mat l = llt.matrixL();
    g.frame = l.transpose()
                  .triangularView<Eigen::Upper>()
                  .solve(Mat::Identity(m.rows(), m.cols()));
    return g;
}

Metric Metric::identity(int dim) {
    Metric g;
    g.g = Mat::Identity(dim, dim);
    g.g_inv = g.g;
    g.frame = g.g;
    return g;
}

double AdmissibleBasis::Residuals::max() const {
    return std::max({square, anticommute, triple, metric, omega_gram});
}

AdmissibleBasis AdmissibleBasis::from_endos(const Metric& g, const Mat& J1, const Mat& J2,
                                            const Mat& J3) {
    AdmissibleBasis b;
    b.J[0] = J1;
    b.J[1] = J2;
    b.J[2] = J3;
    for (int a = 0; a < 3; ++a) b.omega[a] = endo_to_form(g, b.J[a]);
    return b;
}

AdmissibleBasis::Residuals AdmissibleBasis::residuals(const Metric& g) const {
    Residuals r{};
    int d = dim();
    Mat id = Mat::Identity(d, d);
    int n = d / 4;
    for (int a = 0; a < 3; ++a) {
        r.square = std::max(r.square, (J[a] * J[a] + id).cwiseAbs().maxCoeff());
        r.metric = std::max(r.metric,
                            (J[a].transpose() * g.g * J[a] - g.g).cwiseAbs().maxCoeff());
        for (int b = a + 1; b < 3; ++b)
            r.anticommute = std::max(
                r.anticommute, (J[a] * J[b] + J[b] * J[a]).cwiseAbs().maxCoeff());
    }
    r.triple = (J[2] - J[0] * J[1]).cwiseAbs().maxCoeff();
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
            double want = (a == b) ? 2.0 * n : 0.0;
            r.omega_gram = std::max(
                r.omega_gram, std::abs(lambda2_inner(g, omega[a], omega[b]) - want));
        }
    return r;
}

namespace {

// Right multiplication by i, j on one quaternion block (x, xi, xj, xk).
void fill_block_j1(Mat& m, int o) {
    m(o + 0, o + 1) = -1; m(o + 1, o + 0) = 1;
    m(o + 2, o + 3) = 1;  m(o + 3, o + 2) = -1;
}
void fill_block_j2(Mat& m, int o) {
    m(o + 0, o + 2) = -1; m(o + 1, o + 3) = -1;
    m(o + 2, o + 0) = 1;  m(o + 3, o + 1) = 1;
}

} // namespace

std::pair<Metric, AdmissibleBasis> standard_flat_basis(int n) {
    if (n < 2) throw std::invalid_argument("quaternionic dimension n must be >= 2");
    int d = 4 * n;
    Metric g = Metric::identity(d);
    Mat J1 = Mat::Zero(d, d), J2 = Mat::Zero(d, d);
    for (int b = 0; b < n; ++b) {
        fill_block_j1(J1, 4 * b);
        fill_block_j2(J2, 4 * b);
    }
    Mat J3 = J1 * J2;
    return {g, AdmissibleBasis::from_endos(g, J1, J2, J3)};
}

double lambda2_inner(const Metric& g, const TwoForm& a, const TwoForm& b) {
    if (a.dim() != b.dim() || a.dim() != g.dim())
        throw std::invalid_argument("lambda2_inner: dimension mismatch");
    return 0.5 * (a.mat().transpose() * g.g_inv * b.mat() * g.g_inv).trace();
}

double lambda2_norm(const Metric& g, const TwoForm& a) {
    return std::sqrt(std::max(0.0, lambda2_inner(g, a, a)));
}

TwoForm wedge(const Vec& x, const Vec& y, const Metric& g) {
    Vec xl = g.lower(x), yl = g.lower(y);
    return TwoForm::from_matrix(xl * yl.transpose() - yl * xl.transpose());
}

Vec interior(const Vec& x, const TwoForm& psi) {
    return psi.mat().transpose() * x;
}

Vec interior_vec(const Vec& x, const TwoForm& psi, const Metric& g) {
    return g.raise(interior(x, psi));
}

ThreeForm wedge_1_2(const Vec& alpha, const TwoForm& omega) {
    int d = omega.dim();
    ThreeForm r(d);
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
            for (int c = 0; c < d; ++c)
                r.at(a, b, c) = alpha[a] * omega(b, c) - alpha[b] * omega(a, c) +
                                alpha[c] * omega(a, b);
    return r;
}

Mat form_to_endo(const Metric& g, const TwoForm& psi) {
    return -(g.g_inv * psi.mat());
}

TwoForm endo_to_form(const Metric& g, const Mat& a) {
    return TwoForm::from_matrix(-(g.g * a));
}

TwoForm endo_bracket_on_form(const Mat& a, const TwoForm& psi, const Metric& g,
                             bool* skew_warning) {
    if (skew_warning) {
        double dev = (g.g * a + a.transpose() * g.g).cwiseAbs().maxCoeff();
        *skew_warning = dev > 1e-8 * std::max(1.0, a.cwiseAbs().maxCoeff());
    }
    // ([A, psi])(X, Y) = -psi(AX, Y) - psi(X, AY)
    return TwoForm::from_matrix(-(a.transpose() * psi.mat()) - psi.mat() * a);
}

TwoForm project_s2h(const TwoForm& psi, const AdmissibleBasis& basis, const Metric& g) {
    int d = psi.dim();
    int n = d / 4;
    TwoForm out(d);
    for (int a = 0; a < 3; ++a) {
        // (1/4n) sum_k psi(e_k, J_a e_k) over the g-orthonormal frame.
        double c = 0.0;
        for (int k = 0; k < d; ++k) {
            Vec ek = g.frame.col(k);
            c += psi.eval(ek, basis.J[a] * ek);
        }
        out += (c / (4.0 * n)) * basis.omega[a];
    }
    return out;
}

TwoForm project_s2e(const TwoForm& psi, const AdmissibleBasis& basis, const Metric& g) {
    (void)g;
    Mat acc = psi.mat();
    for (int a = 0; a < 3; ++a)
        acc += basis.J[a].transpose() * psi.mat() * basis.J[a];
    return TwoForm::from_matrix(0.25 * acc);
}

TwoForm project_compatible(const TwoForm& psi, const AdmissibleBasis& basis,
                           const Metric& g) {
    return project_s2h(psi, basis, g) + project_s2e(psi, basis, g);
}

SplitForm project(const TwoForm& psi, const AdmissibleBasis& basis, const Metric& g) {
    if (psi.dim() != g.dim() || basis.dim() != g.dim())
        throw std::invalid_argument("project: dimension mismatch");
    SplitForm s;
    s.s2h = project_s2h(psi, basis, g);
    s.s2e = project_s2e(psi, basis, g);
    s.hw = psi - s.s2h - s.s2e;
    return s;
}

} // namespace qkck
