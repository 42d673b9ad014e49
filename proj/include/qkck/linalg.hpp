#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace qkck {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Antisymmetric bilinear form with both indices lowered.
// Entry (a,b) is the value on the coordinate pair (e_a, e_b); the storage
// keeps psi + psi^T = 0 exact by construction.
class TwoForm {
public:
    TwoForm() = default;
    explicit TwoForm(int dim) : m_(Mat::Zero(dim, dim)) {}

    static TwoForm from_matrix(const Mat& m) {
        TwoForm f;
        f.m_ = 0.5 * (m - m.transpose().eval());
        return f;
    }

    int dim() const { return static_cast<int>(m_.rows()); }
    const Mat& mat() const { return m_; }
    double operator()(int a, int b) const { return m_(a, b); }

    // psi(X, Y) with chart (contravariant) vector components.
    double eval(const Vec& x, const Vec& y) const { return x.dot(m_ * y); }

    TwoForm operator+(const TwoForm& o) const { return wrap(m_ + o.m_); }
    TwoForm operator-(const TwoForm& o) const { return wrap(m_ - o.m_); }
    TwoForm operator*(double s) const { return wrap(m_ * s); }
    TwoForm operator-() const { return wrap(-m_); }
    TwoForm& operator+=(const TwoForm& o) { m_ += o.m_; return *this; }
    TwoForm& operator-=(const TwoForm& o) { m_ -= o.m_; return *this; }

    double max_abs() const { return m_.size() ? m_.cwiseAbs().maxCoeff() : 0.0; }

private:
    static TwoForm wrap(const Mat& m) { TwoForm f; f.m_ = m; return f; }
    Mat m_;
};

inline TwoForm operator*(double s, const TwoForm& f) { return f * s; }

// Antisymmetric trilinear form, all indices lowered.
class ThreeForm {
public:
    ThreeForm() : dim_(0) {}
    explicit ThreeForm(int dim) : dim_(dim), v_(static_cast<size_t>(dim) * dim * dim, 0.0) {}

    int dim() const { return dim_; }
    double operator()(int a, int b, int c) const { return v_[idx(a, b, c)]; }
    double& at(int a, int b, int c) { return v_[idx(a, b, c)]; }

    double eval(const Vec& x, const Vec& y, const Vec& z) const {
        double s = 0.0;
        for (int a = 0; a < dim_; ++a)
            for (int b = 0; b < dim_; ++b)
                for (int c = 0; c < dim_; ++c)
                    s += v_[idx(a, b, c)] * x[a] * y[b] * z[c];
        return s;
    }

    ThreeForm operator+(const ThreeForm& o) const {
        ThreeForm r(dim_);
        for (size_t i = 0; i < v_.size(); ++i) r.v_[i] = v_[i] + o.v_[i];
        return r;
    }
    ThreeForm operator-(const ThreeForm& o) const {
        ThreeForm r(dim_);
        for (size_t i = 0; i < v_.size(); ++i) r.v_[i] = v_[i] - o.v_[i];
        return r;
    }
    ThreeForm operator*(double s) const {
        ThreeForm r(dim_);
        for (size_t i = 0; i < v_.size(); ++i) r.v_[i] = v_[i] * s;
        return r;
    }

    double max_abs() const {
        double m = 0.0;
        for (double x : v_) m = std::max(m, std::abs(x));
        return m;
    }

private:
    size_t idx(int a, int b, int c) const {
        return (static_cast<size_t>(a) * dim_ + b) * dim_ + c;
    }
    int dim_;
    std::vector<double> v_;
};

// Rank-4 tensor, all indices lowered (used for curvature).
class Tensor4 {
public:
    Tensor4() : dim_(0) {}
    explicit Tensor4(int dim)
        : dim_(dim), v_(static_cast<size_t>(dim) * dim * dim * dim, 0.0) {}

    int dim() const { return dim_; }
    double operator()(int a, int b, int c, int d) const { return v_[idx(a, b, c, d)]; }
    double& at(int a, int b, int c, int d) { return v_[idx(a, b, c, d)]; }

    Tensor4 operator+(const Tensor4& o) const {
        Tensor4 r(dim_);
        for (size_t i = 0; i < v_.size(); ++i) r.v_[i] = v_[i] + o.v_[i];
        return r;
    }
    Tensor4 operator-(const Tensor4& o) const {
        Tensor4 r(dim_);
        for (size_t i = 0; i < v_.size(); ++i) r.v_[i] = v_[i] - o.v_[i];
        return r;
    }
    Tensor4 operator*(double s) const {
        Tensor4 r(dim_);
        for (size_t i = 0; i < v_.size(); ++i) r.v_[i] = v_[i] * s;
        return r;
    }

    double frobenius() const {
        double s = 0.0;
        for (double x : v_) s += x * x;
        return std::sqrt(s);
    }
    double max_abs() const {
        double m = 0.0;
        for (double x : v_) m = std::max(m, std::abs(x));
        return m;
    }
    const std::vector<double>& data() const { return v_; }

private:
    size_t idx(int a, int b, int c, int d) const {
        return ((static_cast<size_t>(a) * dim_ + b) * dim_ + c) * dim_ + d;
    }
    int dim_;
    std::vector<double> v_;
};

// Rank-5 tensor, all indices lowered; index 0 is the derivative slot.
class Tensor5 {
public:
    Tensor5() : dim_(0) {}
    explicit Tensor5(int dim)
        : dim_(dim), v_(static_cast<size_t>(dim) * dim * dim * dim * dim, 0.0) {}

    int dim() const { return dim_; }
    double operator()(int m, int a, int b, int c, int d) const { return v_[idx(m, a, b, c, d)]; }
    double& at(int m, int a, int b, int c, int d) { return v_[idx(m, a, b, c, d)]; }
    bool empty() const { return v_.empty(); }
    double max_abs() const {
        double m = 0.0;
        for (double x : v_) m = std::max(m, std::abs(x));
        return m;
    }

private:
    size_t idx(int m, int a, int b, int c, int d) const {
        return (((static_cast<size_t>(m) * dim_ + a) * dim_ + b) * dim_ + c) * dim_ + d;
    }
    int dim_;
    std::vector<double> v_;
};

// Riemannian metric at a point, with the derived quantities every pointwise
// operation needs: the inverse and a g-orthonormal frame (columns of
// `frame`, obtained from the Cholesky factor g = L L^T as L^{-T}).
struct Metric {
    Mat g;
    Mat g_inv;
    Mat frame;

    static Metric from_matrix(const Mat& m);
    static Metric identity(int dim);

    int dim() const { return static_cast<int>(g.rows()); }
    double ip(const Vec& x, const Vec& y) const { return x.dot(g * y); }
    double norm(const Vec& x) const { return std::sqrt(std::max(0.0, ip(x, x))); }
    Vec lower(const Vec& x) const { return g * x; }
    Vec raise(const Vec& x) const { return g_inv * x; }
};

// Deterministic random stream. Uses explicit bit-to-double conversion and
// Box-Muller so that output is identical across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

    // Derive an independent stream for a named check: adding checks never
    // perturbs the samples other checks see.
    static Rng for_check(uint64_t seed, const std::string& name) {
        uint64_t h = 1469598103934665603ULL;
        for (unsigned char c : name) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        return Rng(seed ^ h);
    }

    uint64_t next_u64() {
        // splitmix64
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 1e-300);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double th = 2.0 * M_PI * u2;
        spare_ = r * std::sin(th);
        have_spare_ = true;
        return r * std::cos(th);
    }

    Vec vec(int dim) {
        Vec v(dim);
        for (int i = 0; i < dim; ++i) v[i] = normal();
        return v;
    }

    Vec unit_vec(int dim) {
        Vec v = vec(dim);
        double n = v.norm();
        while (n < 1e-12) { v = vec(dim); n = v.norm(); }
        return v / n;
    }

    TwoForm two_form(int dim) {
        Mat m(dim, dim);
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j) m(i, j) = normal();
        return TwoForm::from_matrix(m);
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

inline double rel_err(double value, double reference) {
    double scale = std::max(std::abs(reference), 1e-300);
    return std::abs(value - reference) / scale;
}

} // namespace qkck
