#include "qkck/ckforms.hpp"

#include "qkck/detail/quaternion.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace qkck {

namespace {

Vec coord_vec(int d, int a) {
    Vec v = Vec::Zero(d);
    v[a] = 1.0;
    return v;
}

double resolve_step(const ChartModel& model, const FormField& f, double step) {
    return step > 0.0 ? step : fd_step_for_depth(model, f.fd_depth);
}

// Centred stencil of a form field: psi(p +- h e_a) for every coordinate a,
// shared by the derivative assemblies below.
struct FormStencil {
    TwoForm center;
    std::vector<Mat> partial;  // partial[a] = d_a psi
};

FormStencil form_stencil(const FormField& f, const Vec& p, double h) {
    int d = static_cast<int>(p.size());
    FormStencil st;
    st.center = f.eval(p);
    st.partial.resize(d);
    for (int a = 0; a < d; ++a) {
        Vec dp = coord_vec(d, a) * h;
        st.partial[a] = (f.eval(p + dp).mat() - f.eval(p - dp).mat()) / (2.0 * h);
    }
    return st;
}

std::vector<Mat> covariant_partials(const FormStencil& st,
                                    const std::vector<Mat>& gamma) {
    int d = static_cast<int>(st.partial.size());
    std::vector<Mat> cov(d);
    for (int a = 0; a < d; ++a) {
        Mat ga(d, d);
        for (int k = 0; k < d; ++k) ga.row(k) = gamma[k].row(a);
        cov[a] = st.partial[a] - ga.transpose() * st.center.mat() -
                 st.center.mat() * ga;
    }
    return cov;
}

ThreeForm assemble_d(const std::vector<Mat>& slices) {
    int d = static_cast<int>(slices.size());
    ThreeForm out(d);
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
            for (int c = 0; c < d; ++c)
                out.at(a, b, c) =
                    slices[a](b, c) - slices[b](a, c) + slices[c](a, b);
    return out;
}

Vec codifferential_from(const std::vector<Mat>& cov, const Metric& g) {
    int d = g.dim();
    Vec acc = Vec::Zero(d);
    for (int k = 0; k < d; ++k) {
        Vec ek = g.frame.col(k);
        Mat nabla_k = Mat::Zero(d, d);
        for (int a = 0; a < d; ++a) nabla_k += ek[a] * cov[a];
        acc -= nabla_k.transpose() * ek;  // i_{e_k} of the lowered 2-tensor
    }
    return g.raise(acc);
}

} // namespace

double fd_step_for_depth(const ChartModel& model, int depth) {
    if (depth <= 1) return model.fd_step;
    if (depth == 2) return 10.0 * model.fd_step;
    return 30.0 * model.fd_step;
}

Vec codifferential(GeometryCache& cache, const FormField& psi, const Vec& p,
                   double step) {
    double h = resolve_step(cache.model(), psi, step);
    const GeometrySample& s = cache.sample(p);
    FormStencil st = form_stencil(psi, p, h);
    return codifferential_from(covariant_partials(st, s.gamma), s.g);
}

ThreeForm exterior_derivative(GeometryCache& cache, const FormField& psi,
                              const Vec& p, double step) {
    double h = resolve_step(cache.model(), psi, step);
    FormStencil st = form_stencil(psi, p, h);
    return assemble_d(st.partial);
}

ThreeForm exterior_derivative_cov(GeometryCache& cache, const FormField& psi,
                                  const Vec& p, double step) {
    double h = resolve_step(cache.model(), psi, step);
    const GeometrySample& s = cache.sample(p);
    FormStencil st = form_stencil(psi, p, h);
    return assemble_d(covariant_partials(st, s.gamma));
}

CkResidual ck_residual(GeometryCache& cache, const FormField& psi, const Vec& p) {
    const ChartModel& model = cache.model();
    int d = model.dim();
    double h = resolve_step(model, psi, 0.0);
    const GeometrySample& s = cache.sample(p);
    QKContext ctx = point_context(s);

    FormStencil st = form_stencil(psi, p, h);
    std::vector<Mat> cov = covariant_partials(st, s.gamma);
    ThreeForm dpsi = assemble_d(st.partial);
    Vec delta = codifferential_from(cov, s.g);
    double scale = std::max(1.0, lambda2_norm(s.g, st.center));

    double m = 4.0 * model.n;
    CkResidual res{0.0, 0.0};
    for (int a = 0; a < d; ++a) {
        TwoForm nabla = TwoForm::from_matrix(cov[a]);
        Mat iyd(d, d);
        for (int b = 0; b < d; ++b)
            for (int c = 0; c < d; ++c) iyd(b, c) = dpsi(a, b, c);
        TwoForm r1 = nabla - TwoForm::from_matrix(iyd / 3.0) +
                     (1.0 / (m - 1.0)) * wedge(coord_vec(d, a), delta, s.g);
        res.conformal_killing =
            std::max(res.conformal_killing, lambda2_norm(s.g, r1) / scale);

        TwoForm r2 = nabla - dcoeff_form(delta, coord_vec(d, a), ctx);
        res.compatible = std::max(res.compatible, lambda2_norm(s.g, r2) / scale);
    }
    return res;
}

double twistor_residual(GeometryCache& cache, const FormField& psi, const Vec& p) {
    const ChartModel& model = cache.model();
    int d = model.dim();
    const GeometrySample& s = cache.sample(p);
    GeometryCache* pc = &cache;
    FormFieldFn s2h_field = [pc, psi](const Vec& q) {
        const GeometrySample& sq = pc->sample(q);
        return project_s2h(psi.eval(q), sq.basis, sq.g);
    };
    double h = fd_step_for_depth(model, std::max(psi.fd_depth, 1));
    Vec x = codifferential(cache, psi, p);
    double scale = std::max(1.0, lambda2_norm(s.g, psi.eval(p)));
    double worst = 0.0;
    for (int k = 0; k < d; ++k) {
        Vec y = s.g.frame.col(k);
        TwoForm lhs = cov_deriv_form(cache, s2h_field, p, y, h);
        for (int i = 0; i < 3; ++i)
            lhs += (s.basis.omega[i].eval(x, y) / (4.0 * model.n - 1.0)) *
                   s.basis.omega[i];
        worst = std::max(worst, lambda2_norm(s.g, lhs) / scale);
    }
    return worst;
}

double dpsi_formula_residual(GeometryCache& cache, const FormField& psi,
                             const Vec& p) {
    const ChartModel& model = cache.model();
    const GeometrySample& s = cache.sample(p);
    ThreeForm d3 = exterior_derivative(cache, psi, p);
    Vec x = codifferential(cache, psi, p);
    double c = 3.0 / (4.0 * model.n - 1.0);
    for (int i = 0; i < 3; ++i) {
        Vec jix_lowered = s.g.g * (s.basis.J[i] * x);
        d3 = d3 + wedge_1_2(jix_lowered, s.basis.omega[i]) * c;
    }
    double scale = std::max(1.0, lambda2_norm(s.g, psi.eval(p)));
    return d3.max_abs() / scale;
}

namespace {

struct SectionState {
    Mat psi;
    Vec x;
};

// Pointwise data a Runge-Kutta stage needs. The admissible basis rides along
// as state, propagated by parallel transport (the connection preserves Q);
// its span is re-validated against the spectral recovery at path endpoints.
struct Stage {
    Mat g, g_inv;
    Mat gdir;         // Gamma^k_{dir a}
    Mat j[3];         // basis endomorphisms at this stage
    Mat omega[3];
    Mat k[3];         // J_i g^{-1}, for S^2H coefficients
    Vec jdir[3];      // J_i dir
    Vec gjdir[3];     // lowered J_i dir
    Vec w[3];         // omega_i(., dir) as a covector on raised components
    Vec oz[3];        // omega_i^T dir
    Vec gdir_low;     // g dir
    double nu = 0.0;
};

class TransportEngine {
public:
    TransportEngine(const ChartModel& model, double nu, const Vec& dir)
        : model_(model), nu_(nu), dir_(dir), d_(model.dim()) {}

    // geometry of the point (metric and the direction-contracted Christoffel)
    void point_geometry(const Vec& p, Stage& st) const {
        if (model_.kind == ChartModel::Kind::Flat) {
            st.g = Mat::Identity(d_, d_);
            st.g_inv = st.g;
            st.gdir = Mat::Zero(d_, d_);
            st.gdir_low = dir_;
            st.nu = 0.0;
            return;
        }
        st.g = model_.metric_at(p);
        st.g_inv = st.g.inverse();
        double h = model_.fd_step;
        // Gamma_{dir}: (1/2) g^{-1} (D_dir g + B - B^T) with B the Jacobian of g dir
        Mat a = Mat::Zero(d_, d_);
        Mat b(d_, d_);
        for (int i = 0; i < d_; ++i) {
            Vec dp = Vec::Zero(d_);
            dp[i] = h;
            Mat dg = (model_.metric_at(p + dp) - model_.metric_at(p - dp)) / (2.0 * h);
            a += dir_[i] * dg;
            b.row(i) = (dg * dir_).transpose();
        }
        Mat lower = 0.5 * (a + b - b.transpose());
        st.gdir = st.g_inv * lower.transpose();
        st.gdir_low = st.g * dir_;
        st.nu = nu_;
    }

    // derived per-stage quantities from the basis state
    void finish_stage(Stage& st, const Mat j[3]) const {
        for (int i = 0; i < 3; ++i) {
            st.j[i] = j[i];
            Mat gj = st.g * j[i];
            st.omega[i] = 0.5 * (gj.transpose() - gj);
            st.k[i].noalias() = j[i] * st.g_inv;
            st.jdir[i].noalias() = j[i] * dir_;
            st.gjdir[i].noalias() = st.g * st.jdir[i];
            st.w[i].noalias() = j[i].transpose() * st.gdir_low;
            st.oz[i].noalias() = st.omega[i].transpose() * dir_;
        }
    }

    // d/dt of the basis under parallel transport: J G - G J
    static Mat basis_slope(const Mat& gdir, const Mat& j) {
        return j * gdir - gdir * j;
    }

    void section_slope(const Stage& st, const SectionState& s, Mat& dpsi,
                       Vec& dx) const {
        int n = model_.n;
        double cf = 1.0 / (4.0 * n - 1.0);
        // dcoeff 2-form: (X ^ dir + sum J_i X ^ J_i dir - sum omega_i(X,dir) omega_i) / (4n-1)
        Vec gx = st.g * s.x;
        dpsi.noalias() = gx * st.gdir_low.transpose();
        dpsi.noalias() -= st.gdir_low * gx.transpose();
        for (int i = 0; i < 3; ++i) {
            Vec gjx = st.g * (st.j[i] * s.x);
            dpsi.noalias() += gjx * st.gjdir[i].transpose();
            dpsi.noalias() -= st.gjdir[i] * gjx.transpose();
            dpsi -= (s.x.dot(st.w[i])) * st.omega[i];
        }
        dpsi *= cf;
        // Christoffel correction for the lowered 2-form
        dpsi.noalias() += st.gdir.transpose() * s.psi;
        dpsi.noalias() += s.psi * st.gdir;

        // dcoeff vector: ((4n-1)/4) i_dir(nu psi^{S2E} - 2 nu psi^{S2H});
        // psi is compatible along the transport, so the combination is
        // nu psi - 3 nu psi^{S2H}.
        if (st.nu != 0.0) {
            Vec acc = s.psi.transpose() * dir_;
            Vec s2h_t = Vec::Zero(d_);
            for (int i = 0; i < 3; ++i) {
                double c = st.k[i].cwiseProduct(s.psi).sum() / (4.0 * n);
                s2h_t += c * st.oz[i];
            }
            acc = nu_ * (acc - 3.0 * s2h_t);
            dx.noalias() = ((4.0 * n - 1.0) / 4.0) * (st.g_inv * acc);
        } else {
            dx.setZero();
        }
        dx.noalias() -= st.gdir * s.x;
    }

    // re-projection onto S^2H + S^2E of the stage, returning the hw fraction
    double reproject(const Stage& st, Mat& psi, Mat& tmp, Mat& tmp2) const {
        int n = model_.n;
        tmp = psi;
        for (int i = 0; i < 3; ++i) {
            tmp2.noalias() = st.j[i].transpose() * psi;
            tmp.noalias() += tmp2 * st.j[i];
        }
        tmp *= 0.25;  // S^2E part
        for (int i = 0; i < 3; ++i) {
            double c = st.k[i].cwiseProduct(psi).sum() / (4.0 * n);
            tmp += c * st.omega[i];
        }
        tmp2 = psi - tmp;  // hw part
        double hw2, p2;
        {
            Mat up = st.g_inv * tmp2 * st.g_inv;
            hw2 = 0.5 * up.cwiseProduct(tmp2).sum();
            up = st.g_inv * psi * st.g_inv;
            p2 = 0.5 * up.cwiseProduct(psi).sum();
        }
        psi = 0.5 * (tmp - tmp.transpose());
        return std::sqrt(std::max(0.0, hw2)) /
               std::max(1.0, std::sqrt(std::max(0.0, p2)));
    }

private:
    const ChartModel& model_;
    double nu_;
    Vec dir_;
    int d_;
};

} // namespace

std::vector<ProlongSection> prolong_transport_many(
    GeometryCache& cache, const PathSpec& path,
    const std::vector<ProlongSection>& inits, double* max_drift) {
    const ChartModel& model = cache.model();
    int d = model.dim();
    if (path.waypoints.size() < 2)
        throw std::invalid_argument("transport: need at least two waypoints");
    if (path.steps_per_segment < 1)
        throw std::invalid_argument("transport: steps_per_segment must be >= 1");
    double margin = 2.0 * (model.curv_step + model.fd_step);
    for (const Vec& w : path.waypoints)
        if (!model.inside(w, margin))
            throw std::domain_error("transport: path leaves the chart domain");

    const GeometrySample& start = cache.sample(path.waypoints.front());
    std::vector<SectionState> states;
    states.reserve(inits.size());
    for (const ProlongSection& init : inits) {
        SplitForm split = project(init.psi, start.basis, start.g);
        double scale = std::max(1.0, lambda2_norm(start.g, init.psi));
        if (lambda2_norm(start.g, split.hw) > 1e-6 * scale)
            throw std::invalid_argument(
                "transport: initial form is not compatible at the start point");
        states.push_back({(split.s2h + split.s2e).mat(), init.x});
    }

    Mat j[3] = {start.basis.J[0], start.basis.J[1], start.basis.J[2]};
    double drift = 0.0;
    Mat dpsi(d, d), tmp(d, d), tmp2(d, d);
    Vec dx(d);
    std::vector<Mat> kpsi(4, Mat(d, d));
    std::vector<Vec> kx(4, Vec(d));

    for (size_t seg = 0; seg + 1 < path.waypoints.size(); ++seg) {
        Vec a = path.waypoints[seg];
        Vec dir = path.waypoints[seg + 1] - a;
        double h = 1.0 / path.steps_per_segment;
        TransportEngine engine(model, start.nu, dir);

        Stage st0, st1, st2;
        engine.point_geometry(a, st0);
        for (int step = 0; step < path.steps_per_segment; ++step) {
            double t = step * h;
            engine.point_geometry(a + (t + 0.5 * h) * dir, st1);
            engine.point_geometry(a + (t + h) * dir, st2);

            // coupled RK4: the basis triple is part of the state
            Mat kj[4][3];
            Mat js[3];
            engine.finish_stage(st0, j);
            for (int i = 0; i < 3; ++i) kj[0][i] = TransportEngine::basis_slope(st0.gdir, j[i]);
            for (int i = 0; i < 3; ++i) js[i] = j[i] + 0.5 * h * kj[0][i];
            Stage stage2 = st1;
            engine.finish_stage(stage2, js);
            for (int i = 0; i < 3; ++i) kj[1][i] = TransportEngine::basis_slope(st1.gdir, js[i]);
            for (int i = 0; i < 3; ++i) js[i] = j[i] + 0.5 * h * kj[1][i];
            Stage stage3 = st1;
            engine.finish_stage(stage3, js);
            for (int i = 0; i < 3; ++i) kj[2][i] = TransportEngine::basis_slope(st1.gdir, js[i]);
            for (int i = 0; i < 3; ++i) js[i] = j[i] + h * kj[2][i];
            Stage stage4 = st2;
            engine.finish_stage(stage4, js);
            for (int i = 0; i < 3; ++i) kj[3][i] = TransportEngine::basis_slope(st2.gdir, js[i]);
            for (int i = 0; i < 3; ++i)
                j[i] += (h / 6.0) * (kj[0][i] + 2.0 * kj[1][i] + 2.0 * kj[2][i] + kj[3][i]);

            Stage* stages[4] = {&st0, &stage2, &stage3, &stage4};
            double coef[4] = {0.0, 0.5 * h, 0.5 * h, h};
            Stage end = st2;
            engine.finish_stage(end, j);
            for (SectionState& s : states) {
                SectionState work = s;
                for (int r = 0; r < 4; ++r) {
                    if (r > 0) {
                        work.psi = s.psi + coef[r] * kpsi[r - 1];
                        work.x = s.x + coef[r] * kx[r - 1];
                    }
                    engine.section_slope(*stages[r], work, dpsi, dx);
                    kpsi[r] = dpsi;
                    kx[r] = dx;
                }
                s.psi += (h / 6.0) * (kpsi[0] + 2.0 * kpsi[1] + 2.0 * kpsi[2] + kpsi[3]);
                s.x += (h / 6.0) * (kx[0] + 2.0 * kx[1] + 2.0 * kx[2] + kx[3]);

                drift = std::max(drift, engine.reproject(end, s.psi, tmp, tmp2));
            }
            st0 = st2;
        }
    }

    // the transported basis must still span S^2H at the endpoint
    const GeometrySample& end = cache.sample(path.waypoints.back());
    for (int i = 0; i < 3; ++i) {
        TwoForm om = endo_to_form(end.g, j[i]);
        TwoForm inside = project_s2h(om, end.basis, end.g);
        double dev = lambda2_norm(end.g, om - inside) /
                     std::max(1.0, lambda2_norm(end.g, om));
        drift = std::max(drift, dev);
    }

    if (drift > 1e-5) {
        std::ostringstream os;
        os << "transport: compatibility drift " << drift
           << " exceeds 1e-5 (basis field discontinuity or step too large)";
        throw std::runtime_error(os.str());
    }
    if (max_drift) *max_drift = drift;

    std::vector<ProlongSection> out;
    out.reserve(states.size());
    for (const SectionState& st : states) {
        ProlongSection s;
        s.psi = TwoForm::from_matrix(st.psi);
        s.x = st.x;
        out.push_back(std::move(s));
    }
    return out;
}

TransportResult prolong_transport(GeometryCache& cache, const PathSpec& path,
                                  const ProlongSection& init) {
    TransportResult res;
    std::vector<ProlongSection> out =
        prolong_transport_many(cache, path, {init}, &res.drift);
    res.section = std::move(out.front());
    res.steps =
        static_cast<int>(path.waypoints.size() - 1) * path.steps_per_segment;
    return res;
}

ParallelField transported_field(GeometryCache& cache, const Vec& anchor,
                                const ProlongSection& value_at_anchor) {
    GeometryCache* pc = &cache;
    auto transport_to = [pc, anchor, value_at_anchor](const Vec& p) {
        double dist = (p - anchor).norm();
        if (dist < 1e-15) return value_at_anchor;
        PathSpec path;
        path.waypoints = {anchor, p};
        path.steps_per_segment = std::max(4, static_cast<int>(std::ceil(dist / 5e-3)));
        return prolong_transport(*pc, path, value_at_anchor).section;
    };
    ParallelField f;
    f.psi.eval = [transport_to](const Vec& p) { return transport_to(p).psi; };
    f.psi.prov = FormField::Provenance::Transported;
    f.psi.fd_depth = 1;
    f.x.eval = [transport_to](const Vec& p) { return transport_to(p).x; };
    f.x.fd_depth = 1;
    return f;
}

HolonomyReport holonomy_dimension(GeometryCache& cache, const Vec& base, int loops,
                                  uint64_t seed, int steps_per_segment) {
    const ChartModel& model = cache.model();
    int d = model.dim();
    const GeometrySample& s0 = cache.sample(base);
    FiberBasis fiber = FiberBasis::build(s0.g, s0.basis);
    int rank = fiber.rank();

    std::vector<ProlongSection> inits;
    inits.reserve(rank);
    for (int i = 0; i < rank; ++i) {
        Vec e = Vec::Zero(rank);
        e[i] = 1.0;
        inits.push_back(fiber.section(e));
    }

    Rng rng(seed ? seed : 1);
    Mat stacked(loops * rank, rank);
    double max_drift = 0.0;
    for (int j = 0; j < loops; ++j) {
        PathSpec path;
        path.steps_per_segment = steps_per_segment;
        int interior = 3 + static_cast<int>(rng.next_u64() % 3);  // 4-6 waypoints
        for (int attempts = 0;; ++attempts) {
            path.waypoints.clear();
            path.waypoints.push_back(base);
            for (int k = 0; k < interior; ++k) {
                double r = 0.3 * rng.uniform(0.3, 1.0);
                path.waypoints.push_back(base + r * rng.unit_vec(d));
            }
            path.waypoints.push_back(base);
            bool ok = true;
            for (size_t a = 0; a + 1 < path.waypoints.size() && ok; ++a)
                if ((path.waypoints[a + 1] - path.waypoints[a]).norm() < 1e-3)
                    ok = false;  // degenerate leg, resample
            if (ok) break;
            if (attempts > 100)
                throw std::runtime_error("holonomy: could not sample a loop");
        }

        double drift = 0.0;
        std::vector<ProlongSection> out =
            prolong_transport_many(cache, path, inits, &drift);
        max_drift = std::max(max_drift, drift);
        for (int i = 0; i < rank; ++i) {
            Vec c = fiber.coords(out[i], s0.g);
            c[i] -= 1.0;
            stacked.block(j * rank, i, rank, 1) = c;
        }
    }

    Eigen::JacobiSVD<Mat> svd(stacked);
    Vec sv = svd.singularValues();  // descending
    Vec asc(rank);
    for (int i = 0; i < rank; ++i) asc[i] = sv[rank - 1 - i];

    HolonomyReport rep;
    rep.loop_count = loops;
    rep.singular_values = asc;
    rep.max_drift = max_drift;
    // The holonomies are O(1) perturbations of the identity, so the unit scale
    // participates in the threshold even when every direction is fixed.
    double leading = std::max(asc[rank - 1], 1.0);
    double threshold = 1e-6 * leading;
    double floor = 1e-12 * leading;
    int fixed = 0;
    while (fixed < rank && asc[fixed] < threshold) ++fixed;
    rep.fixed_dim = fixed;
    if (fixed == 0)
        rep.gap_ratio = 0.0;
    else if (fixed < rank)
        rep.gap_ratio = asc[fixed] / std::max(asc[fixed - 1], floor);
    else
        rep.gap_ratio = leading / std::max(asc[rank - 1], floor);
    return rep;
}

PenroseResult penrose(GeometryCache& cache, const FormField& sigma, const Vec& p) {
    const ChartModel& model = cache.model();
    int d = model.dim();
    const GeometrySample& s = cache.sample(p);
    TwoForm sig0 = sigma.eval(p);
    double scale = std::max(1.0, lambda2_norm(s.g, sig0));
    SplitForm split = project(sig0, s.basis, s.g);
    if (lambda2_norm(s.g, sig0 - split.s2h) > 1e-8 * scale)
        throw std::invalid_argument("penrose: section is not S^2H-valued");

    double h = resolve_step(model, sigma, 0.0);
    Vec delta = codifferential(cache, sigma, p, h);
    Vec delta_lowered = s.g.g * delta;

    double acc = 0.0;
    for (int k = 0; k < d; ++k) {
        Vec z = s.g.frame.col(k);
        TwoForm val = cov_deriv_form(cache, sigma.eval, p, z, h);
        for (int i = 0; i < 3; ++i)
            val += (delta_lowered.dot(s.basis.J[i] * z) / 3.0) * s.basis.omega[i];
        double nrm = lambda2_norm(s.g, val);
        acc += nrm * nrm;
    }
    return {std::sqrt(acc) / scale, delta};
}

std::vector<VecField> killing_fields_hpn(int n) {
    using detail::Quat;
    if (n < 2) throw std::invalid_argument("killing_fields_hpn: n must be >= 2");
    int m = n + 1;
    const Quat qi(0, 1, 0, 0), qj(0, 0, 1, 0), qk(0, 0, 0, 1), qone(1, 0, 0, 0);

    std::vector<std::vector<std::vector<Quat>>> mats;
    auto zero_mat = [m]() {
        return std::vector<std::vector<Quat>>(m, std::vector<Quat>(m));
    };
    for (int a = 0; a < m; ++a)
        for (const Quat& u : {qi, qj, qk}) {
            auto mat = zero_mat();
            mat[a][a] = u;
            mats.push_back(std::move(mat));
        }
    for (int a = 0; a < m; ++a)
        for (int b = a + 1; b < m; ++b)
            for (const Quat& u : {qone, qi, qj, qk}) {
                auto mat = zero_mat();
                mat[a][b] = u;
                mat[b][a] = -u.conj();
                mats.push_back(std::move(mat));
            }

    std::vector<VecField> fields;
    fields.reserve(mats.size());
    for (auto& mat : mats) {
        VecField f;
        f.fd_depth = 0;
        f.eval = [mat, n](const Vec& q) {
            int mm = n + 1;
            std::vector<Quat> qhat(mm);
            for (int b = 0; b < n; ++b)
                qhat[b] = Quat(q[4 * b], q[4 * b + 1], q[4 * b + 2], q[4 * b + 3]);
            qhat[n] = Quat(1, 0, 0, 0);
            std::vector<Quat> y(mm);
            for (int a = 0; a < mm; ++a) {
                Quat acc;
                for (int b = 0; b < mm; ++b) acc = acc + mat[a][b] * qhat[b];
                y[a] = acc;
            }
            Vec out(4 * n);
            for (int a = 0; a < n; ++a) {
                Quat v = y[a] - qhat[a] * y[n];
                out[4 * a] = v.w;
                out[4 * a + 1] = v.x;
                out[4 * a + 2] = v.y;
                out[4 * a + 3] = v.z;
            }
            return out;
        };
        fields.push_back(std::move(f));
    }
    return fields;
}

KillingCheck killing_check(GeometryCache& cache, const VecField& x, const Vec& p) {
    const GeometrySample& s = cache.sample(p);
    double h = fd_step_for_depth(cache.model(), x.fd_depth);
    Mat k = grad_vec_lowered(cache, x.eval, p, h);
    double scale = std::max(1.0, k.cwiseAbs().maxCoeff());
    KillingCheck res;
    res.lie_metric = (k + k.transpose()).cwiseAbs().maxCoeff() / scale;
    res.divergence = (k * s.g.g_inv).trace();
    TwoForm grad_form = TwoForm::from_matrix(k);
    res.grad_hw = lambda2_norm(s.g, project(grad_form, s.basis, s.g).hw) /
                  std::max(1.0, lambda2_norm(s.g, grad_form));
    return res;
}

FormField killing_to_ck(GeometryCache& cache, const VecField& x) {
    GeometryCache* pc = &cache;
    int n = cache.model().n;
    VecFieldFn xf = x.eval;
    double h = fd_step_for_depth(cache.model(), x.fd_depth);
    FormField f;
    f.eval = [pc, xf, n, h](const Vec& p) {
        const GeometrySample& s = pc->sample(p);
        if (std::abs(s.nu) < 1e-10)
            throw std::runtime_error("killing_to_ck: model has nu = 0");
        Mat k = grad_vec_lowered(*pc, xf, p, h);
        TwoForm grad_form = TwoForm::from_matrix(k);
        double ce = 4.0 / ((4.0 * n - 1.0) * s.nu);
        double ch = -2.0 / ((4.0 * n - 1.0) * s.nu);
        return ce * project_s2e(grad_form, s.basis, s.g) +
               ch * project_s2h(grad_form, s.basis, s.g);
    };
    f.prov = FormField::Provenance::Constructed;
    f.fd_depth = x.fd_depth + 1;
    f.codiff_hint = std::make_shared<VecField>(x);
    return f;
}

S2eCorrespondence s2e_correspondence(GeometryCache& cache, const FormField& psi) {
    GeometryCache* pc = &cache;
    int n = cache.model().n;
    S2eCorrespondence out;

    FormFieldFn psi_eval = psi.eval;
    out.u.eval = [pc, psi_eval](const Vec& p) {
        const GeometrySample& s = pc->sample(p);
        return project_s2e(psi_eval(p), s.basis, s.g);
    };
    out.u.prov = FormField::Provenance::Constructed;
    out.u.fd_depth = psi.fd_depth;
    if (psi.codiff_hint) {
        VecField hint = *psi.codiff_hint;
        double factor = (4.0 * n + 2.0) / (4.0 * n - 1.0);
        VecField scaled;
        scaled.fd_depth = hint.fd_depth;
        VecFieldFn he = hint.eval;
        scaled.eval = [he, factor](const Vec& p) { return Vec(factor * he(p)); };
        out.u.codiff_hint = std::make_shared<VecField>(std::move(scaled));
    }

    FormField u_copy = out.u;
    VecField du;
    du.fd_depth = out.u.fd_depth + 1;
    du.eval = [pc, u_copy](const Vec& p) { return codifferential(*pc, u_copy, p); };

    double xfac = (4.0 * n - 1.0) / (4.0 * n + 2.0);
    VecFieldFn du_eval = du.eval;
    out.x.fd_depth = du.fd_depth;
    out.x.eval = [du_eval, xfac](const Vec& p) { return Vec(xfac * du_eval(p)); };

    double hrec = fd_step_for_depth(cache.model(), du.fd_depth);
    FormFieldFn u_eval = out.u.eval;
    out.reconstructed.eval = [pc, u_eval, du_eval, n, hrec](const Vec& p) {
        const GeometrySample& s = pc->sample(p);
        if (std::abs(s.nu) < 1e-10)
            throw std::runtime_error("s2e_correspondence: model has nu = 0");
        Mat k = grad_vec_lowered(*pc, du_eval, p, hrec);
        TwoForm grad_form = TwoForm::from_matrix(k);
        TwoForm corr = project_s2h(grad_form, s.basis, s.g);
        return u_eval(p) - (1.0 / ((2.0 * n + 1.0) * s.nu)) * corr;
    };
    out.reconstructed.prov = FormField::Provenance::Constructed;
    out.reconstructed.fd_depth = du.fd_depth + 1;
    return out;
}

namespace {

TwoForm lie_derivative(GeometryCache& cache, const FormField& psi,
                       const VecField& along, const Vec& p) {
    const ChartModel& model = cache.model();
    int d = model.dim();
    int depth = std::max(psi.fd_depth, along.fd_depth);
    double h = fd_step_for_depth(model, depth);

    ThreeForm dpsi = exterior_derivative(cache, psi, p, h);
    Vec x0 = along.eval(p);
    Mat ixd = Mat::Zero(d, d);
    for (int b = 0; b < d; ++b)
        for (int c = 0; c < d; ++c) {
            double acc = 0.0;
            for (int a = 0; a < d; ++a) acc += x0[a] * dpsi(a, b, c);
            ixd(b, c) = acc;
        }

    // d of the 1-form beta = i_X psi by coordinate differences
    Mat dbeta(d, d);
    for (int a = 0; a < d; ++a) {
        Vec dp = coord_vec(d, a) * h;
        Vec bp = interior(along.eval(p + dp), psi.eval(p + dp));
        Vec bm = interior(along.eval(p - dp), psi.eval(p - dp));
        dbeta.row(a) = ((bp - bm) / (2.0 * h)).transpose();
    }
    return TwoForm::from_matrix(ixd + dbeta - dbeta.transpose());
}

VecField codifferential_field(GeometryCache& cache, const FormField& psi) {
    GeometryCache* pc = &cache;
    VecField f;
    f.fd_depth = psi.fd_depth + 1;
    f.eval = [pc, psi](const Vec& p) { return codifferential(*pc, psi, p); };
    return f;
}

} // namespace

Vec vec_field_bracket(const VecField& x, const VecField& y, const Vec& p,
                      double step) {
    Vec xv = x.eval(p);
    Vec yv = y.eval(p);
    int d = static_cast<int>(p.size());
    Vec out = Vec::Zero(d);
    if (xv.norm() > 1e-14) {
        double t = step / xv.norm();
        out += (y.eval(p + t * xv) - y.eval(p - t * xv)) / (2.0 * t);
    }
    if (yv.norm() > 1e-14) {
        double t = step / yv.norm();
        out -= (x.eval(p + t * yv) - x.eval(p - t * yv)) / (2.0 * t);
    }
    return out;
}

FormField ck_bracket(GeometryCache& cache, const FormField& psi1,
                     const FormField& psi2) {
    GeometryCache* pc = &cache;
    VecField x1 = psi1.codiff_hint ? *psi1.codiff_hint : codifferential_field(cache, psi1);
    VecField x2 = psi2.codiff_hint ? *psi2.codiff_hint : codifferential_field(cache, psi2);

    FormField f;
    FormField p1 = psi1, p2 = psi2;
    f.eval = [pc, p1, p2, x1, x2](const Vec& p) {
        TwoForm l1 = lie_derivative(*pc, p2, x1, p);
        TwoForm l2 = lie_derivative(*pc, p1, x2, p);
        return 0.5 * (l1 - l2);
    };
    f.prov = FormField::Provenance::Constructed;
    f.fd_depth = std::max({psi1.fd_depth, psi2.fd_depth, x1.fd_depth, x2.fd_depth}) + 1;
    if (psi1.codiff_hint && psi2.codiff_hint) {
        // the codifferential of the bracket is the commutator of the
        // codifferentials; carrying it forward keeps nested stencils shallow
        double h = cache.model().fd_step;
        VecField hint;
        hint.fd_depth = std::max(x1.fd_depth, x2.fd_depth) + 1;
        hint.eval = [x1, x2, h](const Vec& p) {
            return vec_field_bracket(x1, x2, p, h);
        };
        f.codiff_hint = std::make_shared<VecField>(std::move(hint));
    }
    return f;
}

FormField flat_ck_family(int n, const TwoForm& psi0, const Vec& x0) {
    auto ctx = std::make_shared<QKContext>(flat_context(n));
    SplitForm split = project(psi0, ctx->basis, ctx->g);
    TwoForm compatible = split.s2h + split.s2e;
    FormField f;
    f.eval = [ctx, compatible, x0](const Vec& p) {
        return compatible + dcoeff_form(x0, p, *ctx);
    };
    f.prov = FormField::Provenance::ClosedForm;
    f.fd_depth = 0;
    VecField hint;
    hint.fd_depth = 0;
    hint.eval = [x0](const Vec&) { return x0; };
    f.codiff_hint = std::make_shared<VecField>(std::move(hint));
    return f;
}

double dparallel_residual(GeometryCache& cache, const FormField& psi,
                          const VecField& x, const Vec& p) {
    const ChartModel& model = cache.model();
    int d = model.dim();
    const GeometrySample& s = cache.sample(p);
    QKContext ctx = point_context(s);
    TwoForm psi0 = psi.eval(p);
    Vec x0 = x.eval(p);
    double hp = fd_step_for_depth(model, psi.fd_depth);
    double hx = fd_step_for_depth(model, x.fd_depth);
    double scale = std::max(1.0, lambda2_norm(s.g, psi0) + s.g.norm(x0));
    double worst = 0.0;
    for (int k = 0; k < d; ++k) {
        Vec z = s.g.frame.col(k);
        TwoForm rf = cov_deriv_form(cache, psi.eval, p, z, hp) -
                     dcoeff_form(x0, z, ctx);
        Vec rv = cov_deriv_vec(cache, x.eval, p, z, hx) - dcoeff_vec(psi0, z, ctx);
        worst = std::max(worst, lambda2_norm(s.g, rf) / scale);
        worst = std::max(worst, s.g.norm(rv) / scale);
    }
    return worst;
}

} // namespace qkck
