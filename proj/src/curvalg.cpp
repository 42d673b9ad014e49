#include "qkck/curvalg.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <complex>
#include <sstream>
#include <stdexcept>

namespace qkck {

namespace {

TwoForm tensor_pair_form(const Tensor4& r, const Vec& y, const Vec& z) {
    int d = r.dim();
    Mat out = Mat::Zero(d, d);
    for (int a = 0; a < d; ++a) {
        if (y[a] == 0.0) continue;
        for (int b = 0; b < d; ++b) {
            double w = y[a] * z[b];
            if (w == 0.0) continue;
            for (int c = 0; c < d; ++c)
                for (int e = 0; e < d; ++e) out(c, e) += w * r(a, b, c, e);
        }
    }
    return TwoForm::from_matrix(out);
}

std::vector<std::pair<int, int>> index_pairs(int d) {
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(d * (d - 1) / 2);
    for (int k = 0; k < d; ++k)
        for (int l = k + 1; l < d; ++l) pairs.emplace_back(k, l);
    return pairs;
}

// Contract every slot of R with the frame columns: Rhat(i,j,k,l) = R(e_i,e_j,e_k,e_l).
Tensor4 frame_transform(const Tensor4& r, const Mat& f) {
    int d = r.dim();
    Tensor4 t1(d), t2(d), t3(d), t4(d);
    for (int i = 0; i < d; ++i)
        for (int b = 0; b < d; ++b)
            for (int c = 0; c < d; ++c)
                for (int e = 0; e < d; ++e) {
                    double s = 0.0;
                    for (int a = 0; a < d; ++a) s += f(a, i) * r(a, b, c, e);
                    t1.at(i, b, c, e) = s;
                }
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            for (int c = 0; c < d; ++c)
                for (int e = 0; e < d; ++e) {
                    double s = 0.0;
                    for (int b = 0; b < d; ++b) s += f(b, j) * t1(i, b, c, e);
                    t2.at(i, j, c, e) = s;
                }
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            for (int k = 0; k < d; ++k)
                for (int e = 0; e < d; ++e) {
                    double s = 0.0;
                    for (int c = 0; c < d; ++c) s += f(c, k) * t2(i, j, c, e);
                    t3.at(i, j, k, e) = s;
                }
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            for (int k = 0; k < d; ++k)
                for (int l = 0; l < d; ++l) {
                    double s = 0.0;
                    for (int e = 0; e < d; ++e) s += f(e, l) * t3(i, j, k, e);
                    t4.at(i, j, k, l) = s;
                }
    return t4;
}

} // namespace

TwoForm CurvatureOp::pair_form(const Vec& y, const Vec& z) const {
    return tensor_pair_form(R, y, z);
}

Vec CurvatureOp::endo_apply(const Vec& y, const Vec& z, const Vec& x,
                            const Metric& g) const {
    return form_to_endo(g, pair_form(y, z)) * x;
}

double CurvatureOp::Residuals::max() const {
    return std::max({antisym12, antisym34, pair_sym, bianchi});
}

CurvatureOp::Residuals CurvatureOp::residuals() const {
    Residuals res{};
    int d = R.dim();
    double scale = std::max(1.0, R.max_abs());
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
            for (int c = 0; c < d; ++c)
                for (int e = 0; e < d; ++e) {
                    res.antisym12 = std::max(res.antisym12,
                                             std::abs(R(a, b, c, e) + R(b, a, c, e)));
                    res.antisym34 = std::max(res.antisym34,
                                             std::abs(R(a, b, c, e) + R(a, b, e, c)));
                    res.pair_sym = std::max(res.pair_sym,
                                            std::abs(R(a, b, c, e) - R(c, e, a, b)));
                    res.bianchi = std::max(
                        res.bianchi,
                        std::abs(R(a, b, c, e) + R(b, c, a, e) + R(c, a, b, e)));
                }
    res.antisym12 /= scale;
    res.antisym34 /= scale;
    res.pair_sym /= scale;
    res.bianchi /= scale;
    return res;
}

TwoForm lambda2_apply(const Tensor4& r, const TwoForm& psi, const Metric& g) {
    int d = r.dim();
    Mat up = g.g_inv * psi.mat() * g.g_inv;  // indices raised
    Mat out = Mat::Zero(d, d);
    for (int a = 0; a < d; ++a)
        for (int b = a + 1; b < d; ++b) {
            double s = 0.0;
            for (int k = 0; k < d; ++k)
                for (int m = 0; m < d; ++m) s += r(a, b, k, m) * up(k, m);
            out(a, b) = 0.5 * s;
            out(b, a) = -0.5 * s;
        }
    return TwoForm::from_matrix(out);
}

Mat ricci(const Tensor4& r, const Metric& g) {
    int d = r.dim();
    Mat ric = Mat::Zero(d, d);
    for (int b = 0; b < d; ++b)
        for (int c = 0; c < d; ++c) {
            double s = 0.0;
            for (int a = 0; a < d; ++a)
                for (int e = 0; e < d; ++e) s += g.g_inv(a, e) * r(a, b, c, e);
            ric(b, c) = s;
        }
    return ric;
}

EinsteinFit recover_nu(const Tensor4& r, const Metric& g, int n) {
    Mat ric = ricci(r, g);
    int d = 4 * n;
    double lambda = (g.g_inv * ric).trace() / d;
    double dev = (ric - lambda * g.g).cwiseAbs().maxCoeff();
    double scale = std::max(ric.cwiseAbs().maxCoeff(), 1e-300);
    return {lambda / (n + 2), dev / scale};
}

Mat lambda2_matrix(const Tensor4& r, const Metric& g) {
    Tensor4 rhat = frame_transform(r, g.frame);
    auto pairs = index_pairs(r.dim());
    int p = static_cast<int>(pairs.size());
    Mat m(p, p);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j)
            m(i, j) = rhat(pairs[i].first, pairs[i].second, pairs[j].first,
                           pairs[j].second);
    return 0.5 * (m + m.transpose());
}

TwoForm lambda2_from_coords(const Vec& coords, const Metric& g) {
    int d = g.dim();
    auto pairs = index_pairs(d);
    Mat c = Mat::Zero(d, d);
    for (size_t i = 0; i < pairs.size(); ++i) {
        c(pairs[i].first, pairs[i].second) = coords[static_cast<int>(i)];
        c(pairs[i].second, pairs[i].first) = -coords[static_cast<int>(i)];
    }
    Mat e = g.g * g.frame;  // lowered frame vectors
    return TwoForm::from_matrix(e * c * e.transpose());
}

Vec lambda2_coords(const TwoForm& psi, const Metric& g) {
    int d = g.dim();
    auto pairs = index_pairs(d);
    Mat c = g.frame.transpose() * psi.mat() * g.frame;
    Vec out(static_cast<int>(pairs.size()));
    for (size_t i = 0; i < pairs.size(); ++i)
        out[static_cast<int>(i)] = c(pairs[i].first, pairs[i].second);
    return out;
}

QKContext flat_context(int n) {
    auto [g, basis] = standard_flat_basis(n);
    QKContext ctx;
    ctx.n = n;
    ctx.g = g;
    ctx.basis = basis;
    ctx.nu = 0.0;
    return ctx;
}

CurvatureOp base_curvature(const QKContext& ctx) {
    int d = ctx.dim();
    CurvatureOp op;
    op.R = Tensor4(d);
    if (ctx.nu == 0.0) return op;
    const Mat& g = ctx.g.g;
    const Mat* om[3] = {&ctx.basis.omega[0].mat(), &ctx.basis.omega[1].mat(),
                        &ctx.basis.omega[2].mat()};
    double f = -ctx.nu / 4.0;
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
            for (int c = 0; c < d; ++c)
                for (int e = 0; e < d; ++e) {
                    double s = g(a, c) * g(b, e) - g(a, e) * g(b, c);
                    for (int i = 0; i < 3; ++i) {
                        const Mat& w = *om[i];
                        s += w(a, c) * w(b, e) - w(a, e) * w(b, c);
                        s += 2.0 * w(a, b) * w(c, e);
                    }
                    op.R.at(a, b, c, e) = f * s;
                }
    return op;
}

CurvatureOp full_curvature(const QKContext& ctx) {
    CurvatureOp base = base_curvature(ctx);
    if (!ctx.has_w()) return base;
    WeylQReport rep = validate_weylq(ctx.W, ctx);
    if (!rep.pass) {
        std::ostringstream os;
        os << "full_curvature: W fails validation (max residual "
           << rep.max_residual() << ")";
        throw std::invalid_argument(os.str());
    }
    base.R = base.R + ctx.W;
    return base;
}

double WeylQReport::max_residual() const {
    return std::max({antisym12, antisym34, pair_sym, bianchi, j_invariance, ricci_null});
}

WeylQReport validate_weylq(const Tensor4& w, const QKContext& ctx, double tol) {
    WeylQReport rep{};
    int d = w.dim();
    double scale = std::max(1.0, w.max_abs());
    CurvatureOp op;
    op.R = w;
    auto base = op.residuals();  // already scaled
    rep.antisym12 = base.antisym12;
    rep.antisym34 = base.antisym34;
    rep.pair_sym = base.pair_sym;
    rep.bianchi = base.bianchi;

    // W_{J X, J Y} = W_{X, Y} for each basis J
    for (int i = 0; i < 3; ++i) {
        const Mat& j = ctx.basis.J[i];
        for (int c = 0; c < d; ++c)
            for (int e = 0; e < d; ++e)
                for (int a = 0; a < d; ++a)
                    for (int b = 0; b < d; ++b) {
                        double s = 0.0;
                        for (int p = 0; p < d; ++p) {
                            if (j(p, a) == 0.0) continue;
                            for (int q = 0; q < d; ++q)
                                s += j(p, a) * j(q, b) * w(p, q, c, e);
                        }
                        rep.j_invariance = std::max(rep.j_invariance,
                                                    std::abs(s - w(a, b, c, e)));
                    }
    }
    rep.j_invariance /= scale;

    Mat ric = ricci(w, ctx.g);
    rep.ricci_null = ric.cwiseAbs().maxCoeff() / scale;

    rep.pass = rep.max_residual() <= tol;
    return rep;
}

namespace {

using C2 = Eigen::Matrix2cd;
using C4 = Eigen::Matrix4cd;
using namespace std::complex_literals;

C4 off_diagonal(const C2& m) {
    C4 x = C4::Zero();
    x.block<2, 2>(0, 2) = m;
    x.block<2, 2>(2, 0) = -m.adjoint();
    return x;
}

double m_inner(const C4& a, const C4& b) { return -0.5 * (a * b).trace().real(); }

} // namespace

Gr2Model weylq_grassmannian() {
    const int n = 2, d = 8;

    // Orthonormal basis of the off-diagonal block m of su(4), via 2x2 complex
    // matrices M with <M, N> = Re tr(M N^*).
    std::array<C2, 8> ms;
    {
        int k = 0;
        for (int p = 0; p < 2; ++p)
            for (int q = 0; q < 2; ++q) {
                C2 re = C2::Zero(), im = C2::Zero();
                re(p, q) = 1.0;
                im(p, q) = 1.0i;
                ms[k++] = re;
                ms[k++] = im;
            }
    }
    std::array<C4, 8> xs;
    for (int k = 0; k < d; ++k) xs[k] = off_diagonal(ms[k]);

    Metric g = Metric::identity(d);
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) {
            double want = (a == b) ? 1.0 : 0.0;
            if (std::abs(m_inner(xs[a], xs[b]) - want) > 1e-12)
                throw std::runtime_error("gr2: m-basis not orthonormal");
        }

    // Quaternionic structure from the su(2) isotropy factor acting by left
    // multiplication on the block.
    C2 u1 = C2::Zero(), u2 = C2::Zero();
    u1(0, 0) = 1.0i;
    u1(1, 1) = -1.0i;
    u2(0, 1) = 1.0;
    u2(1, 0) = -1.0;
    auto ad_matrix = [&](const C2& u) {
        Mat j(d, d);
        for (int k = 0; k < d; ++k) {
            C2 um = u * ms[k];
            for (int l = 0; l < d; ++l) j(l, k) = (um * ms[l].adjoint()).trace().real();
        }
        return j;
    };
    Mat j1 = ad_matrix(u1);
    Mat j2 = ad_matrix(u2);
    Mat j3 = j1 * j2;
    AdmissibleBasis basis = AdmissibleBasis::from_endos(g, j1, j2, j3);
    auto basis_res = basis.residuals(g);
    if (basis_res.max() > 1e-9) {
        std::ostringstream os;
        os << "gr2: admissible basis invariants failed (max residual "
           << basis_res.max() << ")";
        throw std::runtime_error(os.str());
    }

    // Symmetric-space curvature R(X,Y)Z = -[[X,Y],Z] on m.
    CurvatureOp full;
    full.R = Tensor4(d);
    for (int a = 0; a < d; ++a)
        for (int b = a + 1; b < d; ++b) {
            C4 k = xs[a] * xs[b] - xs[b] * xs[a];
            for (int c = 0; c < d; ++c) {
                C4 z = -(k * xs[c] - xs[c] * k);
                for (int e = 0; e < d; ++e) {
                    double v = m_inner(z, xs[e]);
                    full.R.at(a, b, c, e) = v;
                    full.R.at(b, a, c, e) = -v;
                }
            }
        }
    auto curv_res = full.residuals();
    if (curv_res.max() > 1e-10) {
        std::ostringstream os;
        os << "gr2: curvature symmetries failed (max residual " << curv_res.max()
           << ")";
        throw std::runtime_error(os.str());
    }

    QKContext ctx;
    ctx.n = n;
    ctx.g = g;
    ctx.basis = basis;

    EinsteinFit fit = recover_nu(full.R, g, n);
    if (fit.residual > 1e-9) {
        std::ostringstream os;
        os << "gr2: Ricci tensor is not a multiple of g (relative deviation "
           << fit.residual << ")";
        throw std::runtime_error(os.str());
    }
    ctx.nu = fit.nu;

    CurvatureOp base = base_curvature(ctx);
    ctx.W = full.R - base.R;

    WeylQReport wrep = validate_weylq(ctx.W, ctx);
    if (!wrep.pass) {
        std::ostringstream os;
        os << "gr2: W fails quaternionic-Weyl validation (max residual "
           << wrep.max_residual() << ")";
        throw std::runtime_error(os.str());
    }

    Gr2Model model;
    model.w_fraction = ctx.W.frobenius() / full.R.frobenius();
    if (!(model.w_fraction > 0.1))
        throw std::runtime_error("gr2: |W|/|R| unexpectedly small");
    model.ctx = std::move(ctx);
    model.full = std::move(full);
    return model;
}

TwoForm dcoeff_form(const Vec& x, const Vec& z, const QKContext& ctx) {
    TwoForm acc = wedge(x, z, ctx.g);
    for (int i = 0; i < 3; ++i) {
        acc += wedge(ctx.basis.J[i] * x, ctx.basis.J[i] * z, ctx.g);
        acc -= ctx.basis.omega[i].eval(x, z) * ctx.basis.omega[i];
    }
    return acc * (1.0 / (4.0 * ctx.n - 1.0));
}

Vec dcoeff_vec(const TwoForm& psi, const Vec& z, const QKContext& ctx) {
    TwoForm acc = ctx.nu * project_s2e(psi, ctx.basis, ctx.g) -
                  (2.0 * ctx.nu) * project_s2h(psi, ctx.basis, ctx.g);
    if (ctx.has_w())
        acc += (1.0 / (ctx.n + 1.0)) * lambda2_apply(ctx.W, psi, ctx.g);
    return ((4.0 * ctx.n - 1.0) / 4.0) * interior_vec(z, acc, ctx.g);
}

double RDValue::norm(const Metric& g) const {
    double f = lambda2_inner(g, form, form);
    double v = vec.dot(g.g * vec);
    return std::sqrt(std::max(0.0, f + v));
}

RDValue curvature_RD(const Vec& y, const Vec& z, const ProlongSection& s,
                     const QKContext& ctx) {
    int d = ctx.dim();
    RDValue out;
    out.form = TwoForm(d);
    out.vec = Vec::Zero(d);
    if (!ctx.has_w() && !ctx.has_gradw()) return out;

    double np1 = ctx.n + 1.0;
    if (ctx.has_w()) {
        TwoForm wyz = tensor_pair_form(ctx.W, y, z);
        out.form = endo_bracket_on_form(form_to_endo(ctx.g, wyz), s.psi, ctx.g);

        TwoForm wpsi = lambda2_apply(ctx.W, s.psi, ctx.g);
        TwoForm hanging = wedge(interior_vec(y, wpsi, ctx.g), z, ctx.g) -
                          wedge(interior_vec(z, wpsi, ctx.g), y, ctx.g);
        out.form -= (1.0 / np1) * project_s2e(hanging, ctx.basis, ctx.g);

        out.vec = ((ctx.n + 2.0) / np1) *
                  (form_to_endo(ctx.g, wyz) * s.x);
    }
    if (ctx.has_gradw()) {
        TwoForm u = project_s2e(s.psi, ctx.basis, ctx.g);
        auto nabla_w = [&](const Vec& dir) {
            Tensor4 t(d);
            for (int a = 0; a < d; ++a)
                for (int b = 0; b < d; ++b)
                    for (int c = 0; c < d; ++c)
                        for (int e = 0; e < d; ++e) {
                            double acc = 0.0;
                            for (int m = 0; m < d; ++m)
                                acc += dir[m] * ctx.gradW(m, a, b, c, e);
                            t.at(a, b, c, e) = acc;
                        }
            return t;
        };
        Vec c_tensor = interior_vec(y, lambda2_apply(nabla_w(z), u, ctx.g), ctx.g) -
                       interior_vec(z, lambda2_apply(nabla_w(y), u, ctx.g), ctx.g);
        out.vec += ((4.0 * ctx.n - 1.0) / (4.0 * np1)) * c_tensor;
    }
    return out;
}

double check_identity_put(const TwoForm& a, const TwoForm& v, const QKContext& ctx) {
    const Metric& g = ctx.g;
    for (const TwoForm* f : {&a, &v}) {
        SplitForm s = project(*f, ctx.basis, g);
        double scale = std::max(1.0, lambda2_norm(g, *f));
        if (lambda2_norm(g, s.s2h) > 1e-10 * scale ||
            lambda2_norm(g, s.hw) > 1e-10 * scale)
            throw std::invalid_argument("check_identity_put: input not in S^2E");
    }
    int d = ctx.dim();
    TwoForm lhs(d);
    for (int k = 0; k < d; ++k) {
        Vec ek = g.frame.col(k);
        Vec vk = interior_vec(ek, v, g);
        lhs += wedge(interior_vec(ek, a, g), vk, g) -
               wedge(interior_vec(vk, a, g), ek, g);
    }
    lhs = project_s2e(0.5 * lhs, ctx.basis, g);
    TwoForm rhs = endo_bracket_on_form(form_to_endo(g, a), v, g);
    double scale = std::max(1.0, lambda2_norm(g, a) * lambda2_norm(g, v));
    return lambda2_norm(g, lhs - rhs) / scale;
}

double check_identity_w1(const QKContext& ctx, const TwoForm& u, const TwoForm& v) {
    if (!ctx.has_w()) return 0.0;
    const Metric& g = ctx.g;
    TwoForm wu = lambda2_apply(ctx.W, u, g);
    TwoForm wv = lambda2_apply(ctx.W, v, g);
    TwoForm lhs = endo_bracket_on_form(form_to_endo(g, wu), v, g);
    TwoForm rhs = endo_bracket_on_form(form_to_endo(g, wv), u, g);
    return lambda2_norm(g, lhs - (ctx.n + 1.0) * rhs);
}

FiberBasis FiberBasis::build(const Metric& g, const AdmissibleBasis& basis) {
    FiberBasis fb;
    int d = g.dim();
    int n = d / 4;
    double norm = std::sqrt(2.0 * n);
    for (int a = 0; a < 3; ++a) fb.forms.push_back(basis.omega[a] * (1.0 / norm));
    fb.s2h_count = 3;

    // lambda^2-orthonormal basis of S^2E from the spectral decomposition of
    // the projector.
    auto pairs_count = d * (d - 1) / 2;
    Mat proj(pairs_count, pairs_count);
    for (int j = 0; j < pairs_count; ++j) {
        Vec e = Vec::Zero(pairs_count);
        e[j] = 1.0;
        TwoForm b = lambda2_from_coords(e, g);
        proj.col(j) = lambda2_coords(project_s2e(b, basis, g), g);
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (proj + proj.transpose()));
    int expect = n * (2 * n + 1);
    int found = 0;
    for (int i = pairs_count - 1; i >= 0 && found < expect; --i) {
        if (es.eigenvalues()[i] < 0.5) break;
        fb.forms.push_back(lambda2_from_coords(es.eigenvectors().col(i), g));
        ++found;
    }
    if (found != expect)
        throw std::runtime_error("fiber basis: S^2E projector rank mismatch");
    fb.s2e_count = expect;
    fb.vecs = g.frame;
    return fb;
}

Vec FiberBasis::coords(const ProlongSection& s, const Metric& g) const {
    Vec c(rank());
    for (int i = 0; i < form_count(); ++i) c[i] = lambda2_inner(g, s.psi, forms[i]);
    Vec xl = g.g * s.x;
    for (int k = 0; k < vecs.cols(); ++k)
        c[form_count() + k] = vecs.col(k).dot(xl);
    return c;
}

ProlongSection FiberBasis::section(const Vec& coords) const {
    ProlongSection s;
    int d = static_cast<int>(vecs.rows());
    s.psi = TwoForm(d);
    s.x = Vec::Zero(d);
    for (int i = 0; i < form_count(); ++i) s.psi += coords[i] * forms[i];
    for (int k = 0; k < vecs.cols(); ++k) s.x += coords[form_count() + k] * vecs.col(k);
    return s;
}

} // namespace qkck
