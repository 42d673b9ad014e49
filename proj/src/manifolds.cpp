#include "qkck/manifolds.hpp"

#include "qkck/detail/quaternion.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace qkck {

namespace {

using detail::Quat;
using detail::left_mult;

Mat hpn_metric(const Vec& q, int n) {
    double q2 = q.squaredNorm();
    double s = 1.0 / (1.0 + q2);
    // row block a of m maps v to conj(q_a) * v_a summed over a
    Mat m(4, 4 * n);
    for (int a = 0; a < n; ++a) {
        Quat qa = Quat(q[4 * a], q[4 * a + 1], q[4 * a + 2], q[4 * a + 3]).conj();
        m.block(0, 4 * a, 4, 4) = left_mult(qa);
    }
    Mat g = s * Mat::Identity(4 * n, 4 * n) - (s * s) * (m.transpose() * m);
    return g;
}

double step_or_default(double step, double fallback) {
    return step > 0.0 ? step : fallback;
}

void require_inside(const ChartModel& model, const Vec& p, double margin,
                    const char* what) {
    if (!model.inside(p, margin)) {
        std::ostringstream os;
        os << what << ": stencil leaves the chart domain (|p| = " << p.norm()
           << ", radius " << model.domain_radius << ")";
        throw std::domain_error(os.str());
    }
}

std::vector<Mat> christoffels_at(const ChartModel& model, const Vec& p, double h) {
    int d = model.dim();
    Mat g0 = model.metric_at(p);
    Mat ginv = g0.inverse();
    std::vector<Mat> dg(d);
    for (int i = 0; i < d; ++i) {
        Vec dp = Vec::Zero(d);
        dp[i] = h;
        dg[i] = (model.metric_at(p + dp) - model.metric_at(p - dp)) / (2.0 * h);
    }
    std::vector<Mat> gamma(d, Mat::Zero(d, d));
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
            Vec lower(d);
            for (int l = 0; l < d; ++l)
                lower[l] = 0.5 * (dg[i](j, l) + dg[j](i, l) - dg[l](i, j));
            Vec up = ginv * lower;
            for (int k = 0; k < d; ++k) {
                gamma[k](i, j) = up[k];
                gamma[k](j, i) = up[k];
            }
        }
    return gamma;
}

CurvatureOp riemann_raw(const ChartModel& model, const Vec& p, double h_curv,
                        double h_gamma, double* presym) {
    int d = model.dim();
    Mat g0 = model.metric_at(p);

    // dGamma[i][k](j,l) would be wasteful; store per direction i the full
    // Christoffel derivative d_i Gamma^k_{jl}.
    std::vector<std::vector<Mat>> dgamma(d);
    for (int i = 0; i < d; ++i) {
        Vec dp = Vec::Zero(d);
        dp[i] = h_curv;
        auto gp = christoffels_at(model, p + dp, h_gamma);
        auto gm = christoffels_at(model, p - dp, h_gamma);
        dgamma[i].resize(d);
        for (int k = 0; k < d; ++k) dgamma[i][k] = (gp[k] - gm[k]) / (2.0 * h_curv);
    }
    auto gamma0 = christoffels_at(model, p, h_gamma);

    // R^l_{ijk} = d_i G^l_{jk} - d_j G^l_{ik} + G^l_{im} G^m_{jk} - G^l_{jm} G^m_{ik}
    Tensor4 up(d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            for (int k = 0; k < d; ++k)
                for (int l = 0; l < d; ++l) {
                    double s = dgamma[i][l](j, k) - dgamma[j][l](i, k);
                    for (int m = 0; m < d; ++m)
                        s += gamma0[l](i, m) * gamma0[m](j, k) -
                             gamma0[l](j, m) * gamma0[m](i, k);
                    up.at(i, j, k, l) = s;
                }
    Tensor4 low(d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            for (int k = 0; k < d; ++k)
                for (int l = 0; l < d; ++l) {
                    double s = 0.0;
                    for (int m = 0; m < d; ++m) s += up(i, j, k, m) * g0(m, l);
                    low.at(i, j, k, l) = s;
                }

    // enforce the algebraic symmetries, reporting how far off the raw tensor was
    double asym = 0.0;
    double scale = std::max(1.0, low.max_abs());
    Tensor4 sym(d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            for (int k = 0; k < d; ++k)
                for (int l = 0; l < d; ++l) {
                    double a = 0.25 * (low(i, j, k, l) - low(j, i, k, l) -
                                       low(i, j, l, k) + low(j, i, l, k));
                    sym.at(i, j, k, l) = a;
                    asym = std::max(asym, std::abs(a - low(i, j, k, l)));
                }
    Tensor4 out(d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            for (int k = 0; k < d; ++k)
                for (int l = 0; l < d; ++l) {
                    double a = 0.5 * (sym(i, j, k, l) + sym(k, l, i, j));
                    out.at(i, j, k, l) = a;
                    asym = std::max(asym, std::abs(a - low(i, j, k, l)));
                }
    if (presym) *presym = asym / scale;
    CurvatureOp op;
    op.R = out;
    return op;
}

Mat so3_procrustes(const Mat& overlap) {
    Eigen::JacobiSVD<Mat> svd(overlap, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat u = svd.matrixU(), v = svd.matrixV();
    Mat rot = u * v.transpose();
    if (rot.determinant() < 0) {
        Mat d = Mat::Identity(3, 3);
        d(2, 2) = -1.0;
        rot = u * d * v.transpose();
    }
    return rot;
}

BasisRecovery basis_from_curvature(const CurvatureOp& r, const Metric& g, int n,
                                   const AdmissibleBasis* align_to) {
    int d = 4 * n;
    EinsteinFit fit = recover_nu(r.R, g, n);

    Mat m = lambda2_matrix(r.R, g);
    Eigen::SelfAdjointEigenSolver<Mat> es(m);
    const Vec& ev = es.eigenvalues();
    int p = static_cast<int>(ev.size());
    double scale = std::max(std::abs(ev[0]), std::abs(ev[p - 1]));
    double spread = ev[2] - ev[0];
    double gap = ev[3] - ev[2];
    double floor = std::max(1e-12 * scale, spread);
    double ratio = gap / std::max(floor, 1e-300);
    if (ratio < 1e3) {
        std::ostringstream os;
        os << "basis recovery: triple eigenvalue block not isolated "
           << "(gap " << gap << ", noise floor " << floor
           << "); metric not recognisably quaternionic-Kaehler here";
        throw std::runtime_error(os.str());
    }

    double norm = std::sqrt(2.0 * n);
    TwoForm w1 = lambda2_from_coords(es.eigenvectors().col(0), g) * norm;
    TwoForm w2 = lambda2_from_coords(es.eigenvectors().col(1), g) * norm;
    Mat j1 = form_to_endo(g, w1);
    Mat j2 = form_to_endo(g, w2);
    Mat j3 = j1 * j2;
    AdmissibleBasis basis = AdmissibleBasis::from_endos(g, j1, j2, j3);

    if (align_to) {
        Mat overlap(3, 3);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                overlap(a, b) =
                    lambda2_inner(g, align_to->omega[a], basis.omega[b]) / (2.0 * n);
        Mat rot = so3_procrustes(overlap);
        Mat aligned[3];
        for (int a = 0; a < 3; ++a) {
            aligned[a] = Mat::Zero(d, d);
            for (int b = 0; b < 3; ++b) aligned[a] += rot(a, b) * basis.J[b];
        }
        basis = AdmissibleBasis::from_endos(g, aligned[0], aligned[1], aligned[2]);
    }

    BasisRecovery rec;
    rec.basis = std::move(basis);
    rec.nu = fit.nu;
    rec.eigen_gap_ratio = ratio;
    return rec;
}

} // namespace

ChartModel flat_model(int n) {
    if (n < 2) throw std::invalid_argument("flat_model: n must be >= 2");
    ChartModel m;
    m.kind = ChartModel::Kind::Flat;
    m.name = "flat";
    m.n = n;
    m.domain_radius = 1e6;
    int d = 4 * n;
    m.metric_at = [d](const Vec&) { return Mat::Identity(d, d); };
    return m;
}

ChartModel hpn_chart_model(int n, bool validate) {
    if (n < 2) throw std::invalid_argument("hpn_chart_model: n must be >= 2");
    ChartModel m;
    m.kind = ChartModel::Kind::Hpn;
    m.name = "hpn";
    m.n = n;
    m.domain_radius = 0.8;
    m.metric_at = [n](const Vec& q) { return hpn_metric(q, n); };

    if (validate) {
        Rng rng(0x48504e); // fixed probe points
        std::vector<Vec> points;
        points.push_back(Vec::Zero(4 * n));
        for (int i = 0; i < 3; ++i)
            points.push_back(0.4 * m.domain_radius * rng.uniform() *
                             rng.unit_vec(4 * n));
        double nu_min = 1e300, nu_max = -1e300;
        for (const Vec& p : points) {
            RiemannResult rr = riemann(m, p);
            Metric g = Metric::from_matrix(m.metric_at(p));
            EinsteinFit fit = recover_nu(rr.op.R, g, n);
            if (fit.residual > 1e-4) {
                std::ostringstream os;
                os << "hpn self-validation: Ricci not a multiple of g at |q|="
                   << p.norm() << " (relative deviation " << fit.residual << ")";
                throw std::runtime_error(os.str());
            }
            BasisRecovery rec = basis_from_curvature(rr.op, g, n, nullptr);
            QKContext ctx;
            ctx.n = n;
            ctx.g = g;
            ctx.basis = rec.basis;
            ctx.nu = rec.nu;
            CurvatureOp base = base_curvature(ctx);
            double resid = (rr.op.R - base.R).frobenius() / rr.op.R.frobenius();
            if (resid > 1e-4) {
                std::ostringstream os;
                os << "hpn self-validation: curvature does not match the "
                   << "W=0 quaternionic-Kaehler shape at |q|=" << p.norm()
                   << " (relative residual " << resid << ")";
                throw std::runtime_error(os.str());
            }
            nu_min = std::min(nu_min, rec.nu);
            nu_max = std::max(nu_max, rec.nu);
        }
        if (!(nu_min > 0.0))
            throw std::runtime_error("hpn self-validation: recovered nu not positive");
        if ((nu_max - nu_min) / std::abs(nu_max) > 1e-4) {
            std::ostringstream os;
            os << "hpn self-validation: nu varies across points (spread "
               << (nu_max - nu_min) / std::abs(nu_max) << ")";
            throw std::runtime_error(os.str());
        }
    }
    return m;
}

std::vector<Mat> christoffels(const ChartModel& model, const Vec& p, double step) {
    int d = model.dim();
    if (model.kind == ChartModel::Kind::Flat)
        return std::vector<Mat>(d, Mat::Zero(d, d));
    double h = step_or_default(step, model.fd_step);
    require_inside(model, p, h, "christoffels");
    return christoffels_at(model, p, h);
}

Mat gamma_dir(const std::vector<Mat>& gamma, const Vec& z) {
    int d = static_cast<int>(gamma.size());
    Mat g(d, d);
    for (int k = 0; k < d; ++k) g.row(k) = (gamma[k] * z).transpose();
    return g;
}

RiemannResult riemann(const ChartModel& model, const Vec& p, double step,
                      bool richardson) {
    RiemannResult res;
    if (model.kind == ChartModel::Kind::Flat) {
        res.op.R = Tensor4(model.dim());
        res.presym_asymmetry = 0.0;
        return res;
    }
    double h = step_or_default(step, model.curv_step);
    require_inside(model, p, h + model.fd_step, "riemann");
    if (!richardson) {
        res.op = riemann_raw(model, p, h, model.fd_step, &res.presym_asymmetry);
        return res;
    }
    double asym1 = 0.0, asym2 = 0.0;
    CurvatureOp r1 = riemann_raw(model, p, h, model.fd_step, &asym1);
    CurvatureOp r2 = riemann_raw(model, p, 0.5 * h, model.fd_step, &asym2);
    res.op.R = (r2.R * 4.0 - r1.R) * (1.0 / 3.0);
    res.presym_asymmetry = std::max(asym1, asym2);
    return res;
}

BasisRecovery basis_field(const ChartModel& model, const Vec& p,
                          const AdmissibleBasis* align_to) {
    if (model.kind == ChartModel::Kind::Flat) {
        auto [g, basis] = standard_flat_basis(model.n);
        BasisRecovery rec;
        rec.basis = basis;
        rec.nu = 0.0;
        rec.eigen_gap_ratio = 1e12;
        return rec;
    }
    RiemannResult rr = riemann(model, p, 0.0, true);
    Metric g = Metric::from_matrix(model.metric_at(p));
    return basis_from_curvature(rr.op, g, model.n, align_to);
}

QKContext point_context(const GeometrySample& s) {
    QKContext ctx;
    ctx.n = s.g.dim() / 4;
    ctx.g = s.g;
    ctx.basis = s.basis;
    ctx.nu = s.nu;
    return ctx;
}

GeometrySample GeometryCache::compute(const Vec& p) const {
    GeometrySample s;
    s.p = p;
    if (model_.kind == ChartModel::Kind::Flat) {
        auto [g, basis] = standard_flat_basis(model_.n);
        s.g = g;
        s.basis = basis;
        s.gamma = std::vector<Mat>(model_.dim(), Mat::Zero(model_.dim(), model_.dim()));
        s.nu = 0.0;
        return s;
    }
    s.g = Metric::from_matrix(model_.metric_at(p));
    s.gamma = christoffels(model_, p);
    BasisRecovery rec = basis_field(model_, p, nullptr);
    s.basis = std::move(rec.basis);
    s.nu = rec.nu;
    return s;
}

const GeometrySample& GeometryCache::sample(const Vec& p) {
    std::vector<double> key(p.data(), p.data() + p.size());
    auto it = cache_.find(key);
    if (it != cache_.end()) return *it->second;
    if (cache_.size() > 20000) cache_.clear();  // bounded memo
    auto sample = std::make_unique<GeometrySample>(compute(p));
    return *cache_.emplace(std::move(key), std::move(sample)).first->second;
}

TwoForm cov_deriv_form(GeometryCache& cache, const FormFieldFn& f, const Vec& p,
                       const Vec& z, double step) {
    double h = step_or_default(step, cache.model().fd_step);
    double zn = z.norm();
    if (zn == 0.0) return TwoForm(cache.model().dim());
    double t = h / zn;
    Mat dpsi = (f(p + t * z).mat() - f(p - t * z).mat()) / (2.0 * t);
    const GeometrySample& s = cache.sample(p);
    Mat g = gamma_dir(s.gamma, z);
    Mat psi0 = f(p).mat();
    return TwoForm::from_matrix(dpsi - g.transpose() * psi0 - psi0 * g);
}

Vec cov_deriv_vec(GeometryCache& cache, const VecFieldFn& f, const Vec& p,
                  const Vec& z, double step) {
    double h = step_or_default(step, cache.model().fd_step);
    double zn = z.norm();
    if (zn == 0.0) return Vec::Zero(cache.model().dim());
    double t = h / zn;
    Vec dx = (f(p + t * z) - f(p - t * z)) / (2.0 * t);
    const GeometrySample& s = cache.sample(p);
    return dx + gamma_dir(s.gamma, z) * f(p);
}

Mat grad_vec_lowered(GeometryCache& cache, const VecFieldFn& f, const Vec& p,
                     double step) {
    int d = cache.model().dim();
    const GeometrySample& s = cache.sample(p);
    Mat k(d, d);
    for (int a = 0; a < d; ++a) {
        Vec ea = Vec::Zero(d);
        ea[a] = 1.0;
        Vec cov = cov_deriv_vec(cache, f, p, ea, step);
        k.row(a) = (s.g.g * cov).transpose();
    }
    return k;
}

} // namespace qkck
