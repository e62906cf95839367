/// @file util.hpp
/// @brief Small shared utilities: error types, dense matrices for the 1D
///        operator algebra, and a deterministic worker pool.

#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace stagdg {

// ============================================================================
// Error taxonomy
// ============================================================================

/// User-facing configuration/validation problem (bad config key, invalid
/// grid spec, ...). The CLI maps these to exit code 1.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical failure at run time (Krylov non-convergence, breakdown,
/// non-finite field values). The CLI maps these to exit code 2.
struct solver_error : std::runtime_error {
    explicit solver_error(const std::string& what) : std::runtime_error(what) {}
};

/// Broken internal invariant — always a bug, never a user problem.
struct internal_error : std::logic_error {
    explicit internal_error(const std::string& what) : std::logic_error(what) {}
};

#define STAGDG_REQUIRE(cond, msg)                                              \
    do {                                                                       \
        if (!(cond)) throw ::stagdg::internal_error(std::string("internal: ") + (msg)); \
    } while (0)

// ============================================================================
// Dense matrices (small: operator blocks are at most 17x17)
// ============================================================================

/// Row-major dense matrix. Used for every 1D operator block; sizes stay tiny,
/// so no effort is spent on blocking or expression templates.
class Mat {
  public:
    Mat() = default;
    Mat(int rows, int cols) : r_(rows), c_(cols), a_(size_t(rows) * cols, 0.0) {}

    static Mat identity(int n) {
        Mat m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    int rows() const { return r_; }
    int cols() const { return c_; }
    double& operator()(int i, int j) { return a_[size_t(i) * c_ + j]; }
    double operator()(int i, int j) const { return a_[size_t(i) * c_ + j]; }
    const double* data() const { return a_.data(); }
    double* data() { return a_.data(); }

    Mat transposed() const {
        Mat t(c_, r_);
        for (int i = 0; i < r_; ++i)
            for (int j = 0; j < c_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    friend Mat operator*(const Mat& a, const Mat& b) {
        STAGDG_REQUIRE(a.c_ == b.r_, "Mat multiply shape mismatch");
        Mat out(a.r_, b.c_);
        for (int i = 0; i < a.r_; ++i)
            for (int k = 0; k < a.c_; ++k) {
                const double aik = a(i, k);
                for (int j = 0; j < b.c_; ++j) out(i, j) += aik * b(k, j);
            }
        return out;
    }
    friend Mat operator+(const Mat& a, const Mat& b) {
        STAGDG_REQUIRE(a.r_ == b.r_ && a.c_ == b.c_, "Mat add shape mismatch");
        Mat out = a;
        for (size_t i = 0; i < out.a_.size(); ++i) out.a_[i] += b.a_[i];
        return out;
    }
    friend Mat operator-(const Mat& a, const Mat& b) {
        STAGDG_REQUIRE(a.r_ == b.r_ && a.c_ == b.c_, "Mat sub shape mismatch");
        Mat out = a;
        for (size_t i = 0; i < out.a_.size(); ++i) out.a_[i] -= b.a_[i];
        return out;
    }
    friend Mat operator*(double s, const Mat& a) {
        Mat out = a;
        for (double& v : out.a_) v *= s;
        return out;
    }

    /// y = this * x for a contiguous vector of length cols().
    void matvec(const double* x, double* y) const {
        for (int i = 0; i < r_; ++i) {
            double s = 0.0;
            const double* row = a_.data() + size_t(i) * c_;
            for (int j = 0; j < c_; ++j) s += row[j] * x[j];
            y[i] = s;
        }
    }

  private:
    int r_ = 0, c_ = 0;
    std::vector<double> a_;
};

/// Dense LU with partial pivoting; enough for the (M^t-combination) inverses
/// and other <= 17x17 work. Throws internal_error on (near-)singularity.
Mat lu_invert(const Mat& a);

/// Solve a*x = b dense (copy-based, partial pivoting), b overwritten into x.
std::vector<double> lu_solve(Mat a, std::vector<double> b);

// ============================================================================
// Worker pool
// ============================================================================

/// Fixed-size fork/join pool. Ranges are split into exactly `workers()`
/// contiguous chunks and reductions combine per-chunk partials in chunk
/// order, so results are bit-reproducible for a fixed worker count.
class WorkerPool {
  public:
    explicit WorkerPool(int workers = 1);
    ~WorkerPool();
    WorkerPool(const WorkerPool&) = delete;
    WorkerPool& operator=(const WorkerPool&) = delete;

    int workers() const { return nw_; }

    /// Run fn(begin, end, chunk_index) over [0, n) split into workers() chunks.
    void parallel_for(size_t n, const std::function<void(size_t, size_t, int)>& fn) const;

    /// Deterministic dot product (per-chunk partials summed in chunk order).
    double dot(const std::vector<double>& x, const std::vector<double>& y) const;
    double norm2(const std::vector<double>& x) const;

  private:
    struct Impl;
    Impl* impl_ = nullptr;
    int nw_ = 1;
};

/// Process-wide pool used by the kernels; resized by the CLI / test setup.
WorkerPool& pool();
void set_worker_count(int n);

// ============================================================================
// Misc numeric helpers
// ============================================================================

inline double sqr(double x) { return x * x; }

/// log(e_coarse/e_fine)/log(h_coarse/h_fine) with guards for zero errors.
double convergence_order(double e_coarse, double e_fine, double h_coarse, double h_fine);

}  // namespace stagdg
