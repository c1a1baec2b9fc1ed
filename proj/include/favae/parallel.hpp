#ifndef FAVAE_PARALLEL_HPP
#define FAVAE_PARALLEL_HPP

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace favae {

// Fixed-size worker pool for loops over disjoint output slices. Every slice
// keeps its serial arithmetic order, so results are bit-identical for any
// worker count. FAVAE_THREADS caps the pool; FAVAE_THREADS=1 disables it.
class ThreadPool {
  public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    int size() const { return static_cast<int>(workers_.size()) + 1; }

    void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
        if (n <= 0) return;
        if (workers_.empty() || n == 1 || in_worker_) {
            for (std::int64_t i = 0; i < n; ++i) fn(i);
            return;
        }
        {
            std::unique_lock<std::mutex> lk(mu_);
            job_fn_ = &fn;
            job_n_ = n;
            next_.store(0, std::memory_order_relaxed);
            pending_ = static_cast<int>(workers_.size());
            ++generation_;
        }
        cv_start_.notify_all();
        run_indices(fn, n);
        std::unique_lock<std::mutex> lk(mu_);
        cv_done_.wait(lk, [&] { return pending_ == 0; });
        job_fn_ = nullptr;
    }

    ~ThreadPool() {
        {
            std::unique_lock<std::mutex> lk(mu_);
            stop_ = true;
            ++generation_;
        }
        cv_start_.notify_all();
        for (auto& w : workers_) w.join();
    }

  private:
    ThreadPool() {
        int want = static_cast<int>(std::thread::hardware_concurrency());
        if (want <= 0) want = 1;
        if (want > 4) want = 4;
        if (const char* env = std::getenv("FAVAE_THREADS")) {
            const int cap = std::atoi(env);
            if (cap >= 1) want = cap;
        }
        for (int i = 1; i < want; ++i) workers_.emplace_back([this] { worker_loop(); });
    }

    void run_indices(const std::function<void(std::int64_t)>& fn, std::int64_t n) {
        std::int64_t i;
        while ((i = next_.fetch_add(1, std::memory_order_relaxed)) < n) fn(i);
    }

    void worker_loop() {
        in_worker_ = true;
        std::uint64_t seen = 0;
        while (true) {
            const std::function<void(std::int64_t)>* fn = nullptr;
            std::int64_t n = 0;
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_start_.wait(lk, [&] { return generation_ != seen; });
                seen = generation_;
                if (stop_) return;
                fn = job_fn_;
                n = job_n_;
            }
            if (fn) run_indices(*fn, n);
            {
                std::unique_lock<std::mutex> lk(mu_);
                if (--pending_ == 0) cv_done_.notify_all();
            }
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_start_, cv_done_;
    const std::function<void(std::int64_t)>* job_fn_ = nullptr;
    std::int64_t job_n_ = 0;
    std::atomic<std::int64_t> next_{0};
    int pending_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
    static thread_local bool in_worker_;
};

inline thread_local bool ThreadPool::in_worker_ = false;

inline void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
    ThreadPool::instance().parallel_for(n, fn);
}

}  // namespace favae

#endif
