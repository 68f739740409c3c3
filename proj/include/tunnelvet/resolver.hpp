#pragma once

// The network-facing service: a tunnel-vetting caching forwarder
// (validator mode) and the user-end splitter that routes suspicious
// queries to the validator and the rest to a normal resolver.

#include <atomic>
#include <chrono>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <streambuf>
#include <string>
#include <thread>
#include <vector>

#include "tunnelvet/cache.hpp"
#include "tunnelvet/classifier.hpp"
#include "tunnelvet/config.hpp"
#include "tunnelvet/dns.hpp"
#include "tunnelvet/logging.hpp"
#include "tunnelvet/net.hpp"
#include "tunnelvet/registry.hpp"
#include "tunnelvet/uniformity.hpp"

namespace tunnelvet::resolver {

class UpstreamTimeoutError : public std::runtime_error {
 public:
  explicit UpstreamTimeoutError(const std::string& what)
      : std::runtime_error(what) {}
};

namespace detail {

inline std::uint16_t random_query_id() {
  thread_local std::mt19937 rng(std::random_device{}());
  return static_cast<std::uint16_t>(rng() & 0xffff);
}

inline bool question_matches(const dns::DnsMessage& response,
                             const dns::Question& q) {
  return response.questions.size() == 1 &&
         response.questions[0].qname == q.qname &&
         response.questions[0].qtype == q.qtype &&
         response.questions[0].qclass == q.qclass;
}

struct NullBuf : std::streambuf {
  int overflow(int c) override { return c; }
};

inline std::ostream& null_stream() {
  static NullBuf buf;
  static std::ostream out(&buf);
  return out;
}

}  // namespace detail

// One upstream transaction over UDP: fresh random id per transmission, a
// response is accepted only when its id and question echo ours, and each
// timeout burns one retry. `on_transmit` fires once per datagram sent.
inline dns::DnsMessage forward_upstream(
    const dns::Question& q, const net::Endpoint& upstream,
    std::chrono::milliseconds timeout, int retries,
    const std::function<void()>& on_transmit = {}) {
  auto socket = net::UdpSocket::open();
  for (int attempt = 0; attempt <= retries; ++attempt) {
    dns::DnsMessage query;
    query.header.id = detail::random_query_id();
    query.header.rd = true;
    query.questions.push_back(q);
    query.sync_counts();
    socket.send_to(dns::encode(query), upstream);
    if (on_transmit) on_transmit();

    auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (remaining.count() <= 0) break;
      auto datagram = socket.recv_from(remaining);
      if (!datagram) break;
      if (datagram->second != upstream) continue;
      dns::DnsMessage response;
      try {
        response = dns::decode(datagram->first);
      } catch (const dns::DecodeError&) {
        continue;
      }
      // Mismatched ids or questions are discarded; keep waiting.
      if (!response.header.qr || response.header.id != query.header.id ||
          !detail::question_matches(response, q))
        continue;
      return response;
    }
  }
  throw UpstreamTimeoutError("no response from " + upstream.to_string() +
                             " after " + std::to_string(retries + 1) +
                             " transmissions");
}

class Server {
 public:
  Server(config::ServiceConfig cfg, features::Dictionary dictionary,
         registry::Registry reg, std::ostream* log_stream = nullptr)
      : cfg_(std::move(cfg)),
        classifier_(cfg_.classifier, std::move(dictionary)),
        registry_(std::move(reg)),
        sink_(make_sink(cfg_, log_stream)) {
    cfg_.validate();
  }

  ~Server() { stop(); }

  void start() {
    socket_ = net::UdpSocket::bind(cfg_.listen);
    endpoint_ = socket_.local_endpoint();
    running_ = true;
    for (int i = 0; i < cfg_.workers; ++i)
      workers_.emplace_back([this] { worker_loop(); });
  }

  void stop() {
    if (!running_.exchange(false)) return;
    socket_.shutdown_read();
    for (auto& w : workers_)
      if (w.joinable()) w.join();
    workers_.clear();
    socket_.close();
    sink_->flush();
  }

  const net::Endpoint& endpoint() const { return endpoint_; }

  registry::Registry& registry() { return registry_; }
  const registry::Registry& registry() const { return registry_; }
  uniformity::UniformityTracker& tracker() { return tracker_; }
  DnsCache& cache() { return cache_; }
  logging::LogSink& sink() { return *sink_; }
  const classifier::Classifier& query_classifier() const { return classifier_; }

  // Clears accumulated uniformity statistics (wired to SIGHUP in the CLI).
  void reset_stats() { tracker_.reset(); }

 private:
  static std::unique_ptr<logging::LogSink> make_sink(
      const config::ServiceConfig& cfg, std::ostream* log_stream) {
    if (log_stream)
      return std::make_unique<logging::LogSink>(*log_stream, cfg.log_buffer);
    if (!cfg.log_file.empty())
      return std::make_unique<logging::LogSink>(cfg.log_file, cfg.log_buffer);
    return std::make_unique<logging::LogSink>(detail::null_stream(),
                                              cfg.log_buffer);
  }

  void worker_loop() {
    while (running_) {
      auto datagram = socket_.recv_from(std::chrono::milliseconds(50));
      if (!datagram) continue;
      try {
        handle_datagram(datagram->first, datagram->second);
      } catch (const std::exception&) {
        // One bad datagram must not take a worker down.
      }
    }
  }

  void handle_datagram(const std::vector<std::uint8_t>& bytes,
                       const net::Endpoint& client) {
    dns::DnsMessage request;
    try {
      request = dns::decode(bytes);
    } catch (const dns::DecodeError&) {
      if (bytes.size() >= dns::kHeaderSize) {
        dns::DnsMessage formerr;
        formerr.header.id =
            static_cast<std::uint16_t>((bytes[0] << 8) | bytes[1]);
        formerr.header.qr = true;
        formerr.header.rcode = dns::rcode::formerr;
        send(formerr, client);
      }
      return;
    }
    if (request.header.qr) return;  // not a query
    if (request.questions.size() != 1) {
      dns::DnsMessage formerr;
      formerr.header.id = request.header.id;
      formerr.header.qr = true;
      formerr.header.rcode = dns::rcode::formerr;
      formerr.questions = request.questions;
      formerr.sync_counts();
      send(formerr, client);
      return;
    }
    auto now = std::chrono::system_clock::now();
    if (cfg_.mode == config::Mode::Validator)
      handle_validator(request, client, now);
    else
      handle_splitter(request, client, now);
  }

  struct UpstreamResult {
    bool timed_out = false;
    std::uint8_t rcode = dns::rcode::noerror;
    std::vector<dns::ResourceRecord> answers;
    std::vector<dns::ResourceRecord> authorities;
    std::vector<dns::ResourceRecord> additionals;
  };

  void handle_validator(const dns::DnsMessage& request,
                        const net::Endpoint& client, Timestamp now) {
    const dns::Question& q = request.questions[0];
    std::uint64_t corr = next_correlation_.fetch_add(1);
    CacheKey key = CacheKey::of(q);
    bool cache_probe = cache_.contains_fresh(key, now);
    auto verdict = classifier_.classify(q.qname, registry_, tracker_, cache_probe);

    logging::LogRecord rec;
    rec.ts = now;
    rec.direction = logging::Direction::Inbound;
    rec.peer = client.to_string();
    rec.correlation = corr;
    rec.qname = q.qname.to_text();
    rec.qtype = q.qtype;
    rec.verdict = verdict;

    // The inbound record is appended before the response goes out so the
    // log never trails a client that already saw the answer.
    if (verdict.decision == classifier::Decision::Insecure) {
      switch (cfg_.policy) {
        case config::BlockPolicy::NxDomain:
          rec.action = logging::Action::Blocked;
          rec.rcode = dns::rcode::nxdomain;
          sink_->append(std::move(rec));
          respond(request, client, dns::rcode::nxdomain, {}, {}, {});
          break;
        case config::BlockPolicy::ServFail:
          rec.action = logging::Action::Blocked;
          rec.rcode = dns::rcode::servfail;
          sink_->append(std::move(rec));
          respond(request, client, dns::rcode::servfail, {}, {}, {});
          break;
        case config::BlockPolicy::Drop:
          rec.action = logging::Action::Dropped;
          sink_->append(std::move(rec));
          break;
      }
      return;
    }

    if (auto entry = cache_.get(key, now)) {
      auto answers = entry->answers;
      std::uint32_t remaining = entry->remaining_ttl(now);
      for (auto& rr : answers) rr.ttl = remaining;
      rec.action = logging::Action::ServedCache;
      rec.rcode = entry->rcode;
      rec.cache_hit = true;
      sink_->append(std::move(rec));
      respond(request, client, entry->rcode, std::move(answers), {}, {});
      return;
    }

    UpstreamResult result = coalesced_forward(key, q, corr, now);
    rec.action = logging::Action::Forwarded;
    rec.rcode = result.timed_out ? dns::rcode::servfail : result.rcode;
    sink_->append(std::move(rec));
    if (result.timed_out)
      respond(request, client, dns::rcode::servfail, {}, {}, {});
    else
      respond(request, client, result.rcode, result.answers,
              result.authorities, result.additionals);
  }

  void handle_splitter(const dns::DnsMessage& request,
                       const net::Endpoint& client, Timestamp now) {
    const dns::Question& q = request.questions[0];
    std::uint64_t corr = next_correlation_.fetch_add(1);
    auto verdict = classifier_.classify_heuristic(q.qname, tracker_, false);
    const net::Endpoint target =
        verdict.decision == classifier::Decision::Insecure
            ? *cfg_.upstream_validator
            : *cfg_.upstream_normal;

    logging::LogRecord rec;
    rec.ts = now;
    rec.direction = logging::Direction::Inbound;
    rec.peer = client.to_string();
    rec.correlation = corr;
    rec.qname = q.qname.to_text();
    rec.qtype = q.qtype;
    rec.verdict = verdict;
    rec.action = logging::Action::Forwarded;

    auto zone = uniformity::ZoneKey::of(q.qname, cfg_.classifier.zone_depth);
    try {
      auto response =
          forward_upstream(q, target, cfg_.timeout, cfg_.retries,
                           [&] { log_outbound(corr, q, target, now); });
      tracker_.record_response(
          zone, q.qname, uniformity::ResponseOutcome::of_response(response),
          now);
      rec.rcode = response.header.rcode;
      sink_->append(std::move(rec));
      respond(request, client, response.header.rcode, response.answers,
              response.authorities, response.additionals);
    } catch (const UpstreamTimeoutError&) {
      tracker_.record_response(zone, q.qname,
                               uniformity::ResponseOutcome::timeout(), now);
      rec.rcode = dns::rcode::servfail;
      sink_->append(std::move(rec));
      respond(request, client, dns::rcode::servfail, {}, {}, {});
    }
  }

  // At most one upstream transaction in flight per cache key; concurrent
  // identical queries wait on the leader's result.
  UpstreamResult coalesced_forward(const CacheKey& key, const dns::Question& q,
                                   std::uint64_t corr, Timestamp now) {
    std::shared_future<UpstreamResult> future;
    std::shared_ptr<std::promise<UpstreamResult>> promise;
    {
      std::lock_guard lock(flights_mutex_);
      auto it = flights_.find(key);
      if (it != flights_.end()) {
        future = it->second;
      } else {
        promise = std::make_shared<std::promise<UpstreamResult>>();
        flights_[key] = promise->get_future().share();
      }
    }
    if (!promise) {
      auto budget = cfg_.timeout * (cfg_.retries + 1) +
                    std::chrono::milliseconds(1000);
      if (future.wait_for(budget) == std::future_status::ready)
        return future.get();
      return UpstreamResult{.timed_out = true};
    }

    UpstreamResult result;
    auto zone = uniformity::ZoneKey::of(q.qname, cfg_.classifier.zone_depth);
    try {
      auto response = forward_upstream(
          q, *cfg_.upstream, cfg_.timeout, cfg_.retries,
          [&] { log_outbound(corr, q, *cfg_.upstream, now); });
      result.rcode = response.header.rcode;
      result.answers = response.answers;
      result.authorities = response.authorities;
      result.additionals = response.additionals;
      tracker_.record_response(
          zone, q.qname, uniformity::ResponseOutcome::of_response(response),
          now);
      // SERVFAIL and friends are transient; cache only NOERROR and NXDOMAIN.
      if (result.rcode == dns::rcode::noerror ||
          result.rcode == dns::rcode::nxdomain)
        cache_.put(key, result.answers, result.rcode, now, cfg_.clamps);
    } catch (const UpstreamTimeoutError&) {
      result.timed_out = true;
      tracker_.record_response(zone, q.qname,
                               uniformity::ResponseOutcome::timeout(), now);
    }
    {
      std::lock_guard lock(flights_mutex_);
      flights_.erase(key);
    }
    promise->set_value(result);
    return result;
  }

  void log_outbound(std::uint64_t corr, const dns::Question& q,
                    const net::Endpoint& upstream, Timestamp now) {
    logging::LogRecord rec;
    rec.ts = now;
    rec.direction = logging::Direction::Outbound;
    rec.peer = upstream.to_string();
    rec.correlation = corr;
    rec.qname = q.qname.to_text();
    rec.qtype = q.qtype;
    rec.action = logging::Action::Forwarded;
    sink_->append(std::move(rec));
  }

  void respond(const dns::DnsMessage& request, const net::Endpoint& client,
               std::uint8_t rcode, std::vector<dns::ResourceRecord> answers,
               std::vector<dns::ResourceRecord> authorities,
               std::vector<dns::ResourceRecord> additionals) {
    dns::DnsMessage response;
    response.header.id = request.header.id;
    response.header.qr = true;
    response.header.opcode = request.header.opcode;
    response.header.rd = request.header.rd;
    response.header.ra = true;
    response.header.rcode = rcode & 0x0f;
    response.questions = request.questions;
    response.answers = std::move(answers);
    response.authorities = std::move(authorities);
    response.additionals = std::move(additionals);
    response.sync_counts();
    send(response, client);
  }

  void send(dns::DnsMessage& msg, const net::Endpoint& client) {
    msg.sync_counts();
    try {
      socket_.send_to(dns::encode(msg), client);
    } catch (const std::exception&) {
      // Encoding overflow or a vanished client; nothing sane to do.
    }
  }

  config::ServiceConfig cfg_;
  classifier::Classifier classifier_;
  registry::Registry registry_;
  uniformity::UniformityTracker tracker_;
  DnsCache cache_;
  std::unique_ptr<logging::LogSink> sink_;

  net::UdpSocket socket_;
  net::Endpoint endpoint_;
  std::atomic<bool> running_{false};
  std::vector<std::thread> workers_;
  std::atomic<std::uint64_t> next_correlation_{1};

  std::mutex flights_mutex_;
  std::map<CacheKey, std::shared_future<UpstreamResult>> flights_;
};

}  // namespace tunnelvet::resolver
