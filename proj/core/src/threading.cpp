#include "odpg/threading.hpp"

#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <thread>
#include <vector>

namespace odpg {

namespace {

thread_local bool t_inside_pool = false;

// Persistent helper threads; the calling thread acts as worker 0.
class Pool {
  public:
    static Pool& instance() {
        static Pool pool;
        return pool;
    }

    ~Pool() { shutdown(); }

    void resize(int workers) {
        if (workers < 1) workers = 1;
        std::unique_lock lk(control_);
        if (workers == workers_) return;
        shutdown_locked();
        workers_ = workers;
        stop_ = false;
        for (int id = 1; id < workers_; ++id) {
            helpers_.emplace_back([this, id] { helper_main(id); });
        }
    }

    int workers() {
        std::unique_lock lk(control_);
        return workers_;
    }

    void run(int n, const std::function<void(int, int)>& fn) {
        std::unique_lock lk(control_);  // one parallel region at a time
        const int w = workers_;
        if (w <= 1 || n <= 1 || t_inside_pool) {
            for (int i = 0; i < n; ++i) fn(i, 0);
            return;
        }
        {
            std::lock_guard jlk(job_mutex_);
            job_ = &fn;
            job_n_ = n;
            job_workers_ = w;
            pending_ = w - 1;
            ++epoch_;
        }
        cv_work_.notify_all();
        t_inside_pool = true;
        for (int i = 0; i < n; i += w) fn(i, 0);
        t_inside_pool = false;
        std::unique_lock jlk(job_mutex_);
        cv_done_.wait(jlk, [&] { return pending_ == 0; });
        job_ = nullptr;
    }

  private:
    void helper_main(int id) {
        std::uint64_t seen = 0;
        t_inside_pool = true;
        for (;;) {
            const std::function<void(int, int)>* job;
            int n, w;
            {
                std::unique_lock jlk(job_mutex_);
                cv_work_.wait(jlk, [&] { return stop_ || epoch_ != seen; });
                if (stop_) return;
                seen = epoch_;
                job = job_;
                n = job_n_;
                w = job_workers_;
            }
            if (id < w) {
                for (int i = id; i < n; i += w) (*job)(i, id);
            }
            {
                std::lock_guard jlk(job_mutex_);
                if (--pending_ == 0) cv_done_.notify_all();
            }
        }
    }

    void shutdown() {
        std::unique_lock lk(control_);
        shutdown_locked();
    }

    void shutdown_locked() {
        {
            std::lock_guard jlk(job_mutex_);
            stop_ = true;
            ++epoch_;
        }
        cv_work_.notify_all();
        for (auto& t : helpers_) t.join();
        helpers_.clear();
        stop_ = false;
    }

    std::mutex control_;
    std::mutex job_mutex_;
    std::condition_variable cv_work_, cv_done_;
    std::vector<std::thread> helpers_;
    const std::function<void(int, int)>* job_ = nullptr;
    int job_n_ = 0;
    int job_workers_ = 1;
    int pending_ = 0;
    std::uint64_t epoch_ = 0;
    int workers_ = 1;
    bool stop_ = false;
};

}  // namespace

void set_num_threads(int n) { Pool::instance().resize(n); }

int num_threads() { return Pool::instance().workers(); }

void parallel_for(int n, const std::function<void(int)>& fn) {
    Pool::instance().run(n, [&](int i, int) { fn(i); });
}

void parallel_for_worker(int n, const std::function<void(int, int)>& fn) {
    Pool::instance().run(n, fn);
}

}  // namespace odpg
