#pragma once

#include <condition_variable>
#include <cstddef>
#include <deque>
#include <memory>
#include <mutex>
#include <chrono>
#include <optional>
#include <vector>

namespace thermopalm {

/// Bounded single-consumer mailbox. When full, the oldest item is dropped so
/// a slow reader never blocks the producer.
template <typename T>
class LossyQueue {
public:
    explicit LossyQueue(std::size_t capacity) : capacity_(capacity ? capacity : 1) {}

    void push(T item) {
        {
            std::lock_guard lock(mu_);
            if (closed_) return;
            if (items_.size() >= capacity_) {
                items_.pop_front();
                ++dropped_;
            }
            items_.push_back(std::move(item));
        }
        cv_.notify_one();
    }

    std::optional<T> try_pop() {
        std::lock_guard lock(mu_);
        if (items_.empty()) return std::nullopt;
        T v = std::move(items_.front());
        items_.pop_front();
        return v;
    }

    /// Blocks until an item arrives, the timeout passes, or close().
    template <typename Rep, typename Period>
    std::optional<T> pop_for(std::chrono::duration<Rep, Period> timeout) {
        std::unique_lock lock(mu_);
        cv_.wait_for(lock, timeout, [&] { return closed_ || !items_.empty(); });
        if (items_.empty()) return std::nullopt;
        T v = std::move(items_.front());
        items_.pop_front();
        return v;
    }

    void close() {
        {
            std::lock_guard lock(mu_);
            closed_ = true;
        }
        cv_.notify_all();
    }

    bool closed() const {
        std::lock_guard lock(mu_);
        return closed_;
    }

    std::size_t dropped() const {
        std::lock_guard lock(mu_);
        return dropped_;
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return items_.size();
    }

private:
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<T> items_;
    std::size_t capacity_;
    std::size_t dropped_ = 0;
    bool closed_ = false;
};

/// Fan-out to any number of subscribers, each with its own lossy mailbox.
template <typename T>
class Broadcaster {
public:
    using Subscription = std::shared_ptr<LossyQueue<T>>;

    Subscription subscribe(std::size_t capacity = 64) {
        auto q = std::make_shared<LossyQueue<T>>(capacity);
        std::lock_guard lock(mu_);
        subs_.push_back(q);
        return q;
    }

    void unsubscribe(const Subscription& s) {
        if (s) s->close();
        std::lock_guard lock(mu_);
        std::erase(subs_, s);
    }

    void publish(const T& item) {
        std::lock_guard lock(mu_);
        for (auto& s : subs_) s->push(item);
    }

    std::size_t subscribers() const {
        std::lock_guard lock(mu_);
        return subs_.size();
    }

    /// Items dropped so far by current subscribers.
    std::size_t dropped() const {
        std::lock_guard lock(mu_);
        std::size_t n = 0;
        for (const auto& s : subs_) n += s->dropped();
        return n;
    }

    void close_all() {
        std::lock_guard lock(mu_);
        for (auto& s : subs_) s->close();
        subs_.clear();
    }

private:
    mutable std::mutex mu_;
    std::vector<Subscription> subs_;
};

}  // namespace thermopalm
