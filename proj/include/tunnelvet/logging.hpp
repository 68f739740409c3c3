#pragma once

// Forensic query log: JSON lines through a bounded in-memory buffer with a
// single writer thread. Overflow drops the oldest record and counts the
// drop; query handling never waits on the sink.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "tunnelvet/classifier.hpp"

namespace tunnelvet::logging {

using Timestamp = std::chrono::system_clock::time_point;

enum class Direction { Inbound, Outbound };
enum class Action { ServedCache, Forwarded, Blocked, Dropped };

inline std::string_view to_string(Direction d) {
  return d == Direction::Inbound ? "inbound" : "outbound";
}

inline std::string_view to_string(Action a) {
  switch (a) {
    case Action::ServedCache: return "served_cache";
    case Action::Forwarded: return "forwarded";
    case Action::Blocked: return "blocked";
    case Action::Dropped: return "dropped";
  }
  return "?";
}

inline Action action_from_string(std::string_view s) {
  if (s == "served_cache") return Action::ServedCache;
  if (s == "forwarded") return Action::Forwarded;
  if (s == "blocked") return Action::Blocked;
  if (s == "dropped") return Action::Dropped;
  throw std::invalid_argument("unknown action: " + std::string(s));
}

struct LogRecord {
  Timestamp ts{};
  Direction direction = Direction::Inbound;
  std::string peer;          // client (inbound) or upstream (outbound)
  std::uint64_t correlation = 0;
  std::string qname;
  std::uint16_t qtype = 0;
  std::optional<classifier::Verdict> verdict;
  Action action = Action::Forwarded;
  std::optional<int> rcode;
  bool cache_hit = false;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["ts_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                     ts.time_since_epoch())
                     .count();
    j["dir"] = std::string(to_string(direction));
    j["peer"] = peer;
    j["corr"] = correlation;
    j["qname"] = qname;
    j["qtype"] = qtype;
    if (verdict) {
      j["decision"] = std::string(classifier::to_string(verdict->decision));
      j["reason"] = std::string(classifier::to_string(verdict->reason));
      if (verdict->score) j["score"] = *verdict->score;
    }
    j["action"] = std::string(to_string(action));
    if (rcode) j["rcode"] = *rcode;
    j["cache_hit"] = cache_hit;
    return j;
  }

  static LogRecord from_json(const nlohmann::json& j) {
    LogRecord r;
    r.ts = Timestamp{} + std::chrono::milliseconds(j.at("ts_ms").get<std::int64_t>());
    r.direction = j.at("dir").get<std::string>() == "inbound"
                      ? Direction::Inbound
                      : Direction::Outbound;
    r.peer = j.at("peer").get<std::string>();
    r.correlation = j.at("corr").get<std::uint64_t>();
    r.qname = j.at("qname").get<std::string>();
    r.qtype = j.at("qtype").get<std::uint16_t>();
    if (j.contains("decision")) {
      classifier::Verdict v;
      v.decision =
          classifier::decision_from_string(j.at("decision").get<std::string>());
      v.reason = classifier::reason_from_string(j.at("reason").get<std::string>());
      if (j.contains("score")) v.score = j.at("score").get<double>();
      r.verdict = v;
    }
    r.action = action_from_string(j.at("action").get<std::string>());
    if (j.contains("rcode")) r.rcode = j.at("rcode").get<int>();
    r.cache_hit = j.value("cache_hit", false);
    return r;
  }
};

class LogSink {
 public:
  explicit LogSink(std::ostream& out, std::size_t capacity = 10000)
      : out_(&out), capacity_(capacity) {
    start();
  }

  explicit LogSink(const std::filesystem::path& path,
                   std::size_t capacity = 10000)
      : file_(std::make_unique<std::ofstream>(path, std::ios::app)),
        out_(file_.get()),
        capacity_(capacity) {
    if (!*file_)
      throw std::runtime_error("cannot open log file: " + path.string());
    start();
  }

  ~LogSink() { stop(); }

  LogSink(const LogSink&) = delete;
  LogSink& operator=(const LogSink&) = delete;

  void append(LogRecord record) {
    {
      std::lock_guard lock(mutex_);
      if (queue_.size() >= capacity_) {
        queue_.pop_front();
        ++dropped_;
      }
      queue_.push_back(std::move(record));
    }
    cv_.notify_one();
  }

  // Blocks until every queued record has been written and the stream
  // flushed. Meant for shutdown and tests.
  void flush() {
    std::unique_lock lock(mutex_);
    drained_cv_.wait(lock, [this] { return queue_.empty() && !writing_; });
    out_->flush();
  }

  std::uint64_t dropped() const { return dropped_.load(); }
  std::uint64_t io_errors() const { return io_errors_.load(); }

 private:
  void start() {
    writer_ = std::thread([this] { run(); });
  }

  void stop() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    cv_.notify_all();
    if (writer_.joinable()) writer_.join();
  }

  void run() {
    std::unique_lock lock(mutex_);
    for (;;) {
      cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (queue_.empty() && stopping_) break;
      while (!queue_.empty()) {
        LogRecord record = std::move(queue_.front());
        queue_.pop_front();
        writing_ = true;
        lock.unlock();
        (*out_) << record.to_json().dump() << '\n';
        if (!*out_) {
          if (io_errors_.fetch_add(1) == 0)
            std::cerr << "tunnelvet: log sink write failed\n";
          out_->clear();
        }
        lock.lock();
        writing_ = false;
      }
      out_->flush();
      drained_cv_.notify_all();
    }
    out_->flush();
    drained_cv_.notify_all();
  }

  std::unique_ptr<std::ofstream> file_;
  std::ostream* out_;
  std::size_t capacity_;
  std::deque<LogRecord> queue_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable drained_cv_;
  bool stopping_ = false;
  bool writing_ = false;
  std::atomic<std::uint64_t> dropped_{0};
  std::atomic<std::uint64_t> io_errors_{0};
  std::thread writer_;
};

}  // namespace tunnelvet::logging
