/// @file util.cpp
/// @brief Dense LU, worker pool, small numeric helpers.

#include "stagdg/util.hpp"

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <mutex>
#include <thread>

namespace stagdg {

// ============================================================================
// Dense LU (partial pivoting)
// ============================================================================

namespace {

/// In-place LU factorization with row pivoting; returns the permutation.
std::vector<int> lu_factor(Mat& a) {
    const int n = a.rows();
    STAGDG_REQUIRE(n == a.cols(), "lu_factor needs a square matrix");
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;

    for (int k = 0; k < n; ++k) {
        int piv = k;
        double best = std::fabs(a(k, k));
        for (int i = k + 1; i < n; ++i) {
            const double v = std::fabs(a(i, k));
            if (v > best) { best = v; piv = i; }
        }
        if (best < 1e-300)
            throw internal_error("lu_factor: singular matrix");
        if (piv != k) {
            for (int j = 0; j < n; ++j) std::swap(a(k, j), a(piv, j));
            std::swap(perm[k], perm[piv]);
        }
        for (int i = k + 1; i < n; ++i) {
            a(i, k) /= a(k, k);
            const double lik = a(i, k);
            for (int j = k + 1; j < n; ++j) a(i, j) -= lik * a(k, j);
        }
    }
    return perm;
}

void lu_substitute(const Mat& lu, const std::vector<int>& perm, std::vector<double>& x) {
    const int n = lu.rows();
    std::vector<double> b(n);
    for (int i = 0; i < n; ++i) b[i] = x[perm[i]];
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < i; ++j) b[i] -= lu(i, j) * b[j];
    for (int i = n - 1; i >= 0; --i) {
        for (int j = i + 1; j < n; ++j) b[i] -= lu(i, j) * b[j];
        b[i] /= lu(i, i);
    }
    x = std::move(b);
}

}  // namespace

Mat lu_invert(const Mat& a) {
    const int n = a.rows();
    Mat lu = a;
    const std::vector<int> perm = lu_factor(lu);
    Mat inv(n, n);
    std::vector<double> col(n);
    for (int j = 0; j < n; ++j) {
        std::fill(col.begin(), col.end(), 0.0);
        col[j] = 1.0;
        lu_substitute(lu, perm, col);
        for (int i = 0; i < n; ++i) inv(i, j) = col[i];
    }
    return inv;
}

std::vector<double> lu_solve(Mat a, std::vector<double> b) {
    const std::vector<int> perm = lu_factor(a);
    lu_substitute(a, perm, b);
    return b;
}

// ============================================================================
// Worker pool
// ============================================================================

struct WorkerPool::Impl {
    std::vector<std::thread> threads;
    std::mutex mtx;
    std::condition_variable cv_work, cv_done;
    const std::function<void(size_t, size_t, int)>* job = nullptr;
    size_t n = 0;
    uint64_t generation = 0;
    int pending = 0;
    bool stop = false;
    int nw = 1;

    void worker(int id) {
        uint64_t seen = 0;
        for (;;) {
            std::unique_lock<std::mutex> lk(mtx);
            cv_work.wait(lk, [&] { return stop || generation != seen; });
            if (stop) return;
            seen = generation;
            const auto* fn = job;
            const size_t total = n;
            lk.unlock();

            run_chunk(*fn, total, id, nw);

            lk.lock();
            if (--pending == 0) cv_done.notify_all();
        }
    }

    static void run_chunk(const std::function<void(size_t, size_t, int)>& fn,
                          size_t total, int chunk, int nchunks) {
        const size_t per = (total + nchunks - 1) / nchunks;
        const size_t b = std::min(total, per * size_t(chunk));
        const size_t e = std::min(total, b + per);
        if (b < e) fn(b, e, chunk);
    }
};

WorkerPool::WorkerPool(int workers) : nw_(workers < 1 ? 1 : workers) {
    if (nw_ > 1) {
        impl_ = new Impl;
        impl_->nw = nw_;
        for (int i = 1; i < nw_; ++i)
            impl_->threads.emplace_back([this, i] { impl_->worker(i); });
    }
}

WorkerPool::~WorkerPool() {
    if (impl_) {
        {
            std::lock_guard<std::mutex> lk(impl_->mtx);
            impl_->stop = true;
        }
        impl_->cv_work.notify_all();
        for (auto& t : impl_->threads) t.join();
        delete impl_;
    }
}

void WorkerPool::parallel_for(size_t n, const std::function<void(size_t, size_t, int)>& fn) const {
    if (n == 0) return;
    if (!impl_ || nw_ == 1 || n < 64) {
        // Tiny ranges are not worth a fork/join round trip; the chunking is
        // identical either way so results do not depend on this shortcut.
        for (int c = 0; c < 1; ++c) fn(0, n, 0);
        return;
    }
    {
        std::lock_guard<std::mutex> lk(impl_->mtx);
        impl_->job = &fn;
        impl_->n = n;
        impl_->pending = nw_ - 1;
        ++impl_->generation;
    }
    impl_->cv_work.notify_all();
    Impl::run_chunk(fn, n, 0, nw_);
    std::unique_lock<std::mutex> lk(impl_->mtx);
    impl_->cv_done.wait(lk, [&] { return impl_->pending == 0; });
}

double WorkerPool::dot(const std::vector<double>& x, const std::vector<double>& y) const {
    STAGDG_REQUIRE(x.size() == y.size(), "dot length mismatch");
    if (!impl_ || nw_ == 1 || x.size() < 64) {
        double s = 0.0;
        for (size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
        return s;
    }
    std::vector<double> partial(nw_, 0.0);
    parallel_for(x.size(), [&](size_t b, size_t e, int c) {
        double s = 0.0;
        for (size_t i = b; i < e; ++i) s += x[i] * y[i];
        partial[c] = s;
    });
    double s = 0.0;
    for (int c = 0; c < nw_; ++c) s += partial[c];  // fixed association order
    return s;
}

double WorkerPool::norm2(const std::vector<double>& x) const {
    return std::sqrt(dot(x, x));
}

namespace {
WorkerPool* g_pool = new WorkerPool(1);
}

WorkerPool& pool() { return *g_pool; }

void set_worker_count(int n) {
    if (n < 1) n = 1;
    if (g_pool && g_pool->workers() == n) return;
    delete g_pool;
    g_pool = new WorkerPool(n);
}

// ============================================================================
// Misc
// ============================================================================

double convergence_order(double e_coarse, double e_fine, double h_coarse, double h_fine) {
    if (e_fine <= 0.0 || e_coarse <= 0.0) return 0.0;
    return std::log(e_coarse / e_fine) / std::log(h_coarse / h_fine);
}

}  // namespace stagdg
