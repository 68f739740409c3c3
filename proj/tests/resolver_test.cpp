#include "tunnelvet/resolver.hpp"

#include <gtest/gtest.h>

#include <sstream>
#include <thread>

#include "tunnelvet/traffic_lab.hpp"

using namespace tunnelvet;
using namespace tunnelvet::resolver;
using tunnelvet::dns::parse_name;
using tunnelvet::traffic_lab::StubBehavior;
using tunnelvet::traffic_lab::StubScript;
using tunnelvet::traffic_lab::StubUpstream;

namespace {

Timestamp base_time() { return Timestamp{} + std::chrono::hours(100); }

dns::ResourceRecord a_record(const char* name, std::uint32_t ttl,
                             std::uint8_t last = 1) {
  return {parse_name(name), dns::qtype::a, dns::qclass::in, ttl,
          dns::ARecord{{10, 0, 0, last}}};
}

// ---------------------------------------------------------------------------
// Cache

TEST(Cache, FreshUntilTtlBoundary) {
  DnsCache cache;
  config::CacheClamps clamps;
  auto key = CacheKey{"host.example", dns::qtype::a};
  cache.put(key, {a_record("host.example", 300)}, dns::rcode::noerror,
            base_time(), clamps);
  EXPECT_TRUE(cache.get(key, base_time() + std::chrono::seconds(299)));
  EXPECT_FALSE(cache.get(key, base_time() + std::chrono::seconds(301)));
  EXPECT_FALSE(cache.get(key, base_time() + std::chrono::seconds(300)));
}

TEST(Cache, NegativeAnswersCachedWithNegativeTtl) {
  DnsCache cache;
  config::CacheClamps clamps;  // negative_ttl 60
  auto key = CacheKey{"gone.example", dns::qtype::a};
  cache.put(key, {}, dns::rcode::nxdomain, base_time(), clamps);
  auto hit = cache.get(key, base_time() + std::chrono::seconds(30));
  ASSERT_TRUE(hit);
  EXPECT_EQ(hit->rcode, dns::rcode::nxdomain);
  EXPECT_TRUE(hit->answers.empty());
  EXPECT_FALSE(cache.get(key, base_time() + std::chrono::seconds(61)));
}

TEST(Cache, TtlClampFloorAndCeiling) {
  DnsCache cache;
  config::CacheClamps clamps;  // [1, 86400]
  auto key = CacheKey{"zero.example", dns::qtype::a};
  cache.put(key, {a_record("zero.example", 0)}, dns::rcode::noerror,
            base_time(), clamps);
  auto hit = cache.get(key, base_time() + std::chrono::milliseconds(500));
  ASSERT_TRUE(hit);
  EXPECT_EQ(hit->ttl, 1u);
  EXPECT_FALSE(cache.get(key, base_time() + std::chrono::seconds(1)));

  auto key2 = CacheKey{"huge.example", dns::qtype::a};
  cache.put(key2, {a_record("huge.example", 1000000)}, dns::rcode::noerror,
            base_time(), clamps);
  EXPECT_EQ(cache.get(key2, base_time())->ttl, 86400u);
}

TEST(Cache, MinimumTtlAcrossAnswersWins) {
  DnsCache cache;
  config::CacheClamps clamps;
  auto key = CacheKey{"multi.example", dns::qtype::a};
  cache.put(key,
            {a_record("multi.example", 600, 1), a_record("multi.example", 45, 2)},
            dns::rcode::noerror, base_time(), clamps);
  auto hit = cache.get(key, base_time());
  ASSERT_TRUE(hit);
  EXPECT_EQ(hit->ttl, 45u);
  EXPECT_EQ(hit->remaining_ttl(base_time() + std::chrono::seconds(40)), 5u);
}

// ---------------------------------------------------------------------------
// Logging

TEST(LogSink, DropsOldestOnOverflow) {
  std::ostringstream out;
  {
    logging::LogSink sink(out, 5);
    // Stall the writer by appending quickly; capacity applies to the queue,
    // so with a running writer we can only assert the drop counter stays
    // consistent with what reaches the stream.
    for (int i = 0; i < 200; ++i) {
      logging::LogRecord rec;
      rec.correlation = static_cast<std::uint64_t>(i);
      rec.qname = "q" + std::to_string(i);
      sink.append(std::move(rec));
    }
    sink.flush();
    std::istringstream lines(out.str());
    std::string line;
    std::size_t written = 0;
    while (std::getline(lines, line)) ++written;
    EXPECT_EQ(written + sink.dropped(), 200u);
  }
}

TEST(LogRecord, JsonRoundTrip) {
  logging::LogRecord rec;
  rec.ts = base_time();
  rec.direction = logging::Direction::Inbound;
  rec.peer = "127.0.0.1:4242";
  rec.correlation = 77;
  rec.qname = "x.evil.example";
  rec.qtype = dns::qtype::txt;
  rec.verdict = classifier::Verdict{classifier::Decision::Insecure,
                                    classifier::Reason::Blacklisted,
                                    std::nullopt};
  rec.action = logging::Action::Blocked;
  rec.rcode = 3;
  auto back = logging::LogRecord::from_json(rec.to_json());
  EXPECT_EQ(back.peer, rec.peer);
  EXPECT_EQ(back.correlation, rec.correlation);
  EXPECT_EQ(back.qname, rec.qname);
  EXPECT_EQ(back.verdict, rec.verdict);
  EXPECT_EQ(back.action, rec.action);
  EXPECT_EQ(back.rcode, rec.rcode);
}

// ---------------------------------------------------------------------------
// forward_upstream

TEST(ForwardUpstream, RelaysAnswer) {
  StubScript script;
  script.default_behavior = StubBehavior::answer({192, 0, 2, 7}, 120);
  StubUpstream stub(std::move(script));
  dns::Question q{parse_name("host.example"), dns::qtype::a, dns::qclass::in};
  auto response = forward_upstream(q, stub.endpoint(),
                                   std::chrono::milliseconds(500), 0);
  ASSERT_EQ(response.answers.size(), 1u);
  EXPECT_EQ(std::get<dns::ARecord>(response.answers[0].rdata),
            (dns::ARecord{{192, 0, 2, 7}}));
}

TEST(ForwardUpstream, RetriesThenTimesOut) {
  StubScript script;
  script.default_behavior = StubBehavior::silence();
  StubUpstream stub(std::move(script));
  dns::Question q{parse_name("dead.example"), dns::qtype::a, dns::qclass::in};
  int transmissions = 0;
  EXPECT_THROW(forward_upstream(q, stub.endpoint(),
                                std::chrono::milliseconds(120), 1,
                                [&] { ++transmissions; }),
               UpstreamTimeoutError);
  EXPECT_EQ(transmissions, 2);  // retries=1 means two transmissions
  // Give the stub a beat to drain its socket before counting.
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  EXPECT_EQ(stub.query_count(), 2u);
}

TEST(ForwardUpstream, IgnoresMismatchedIdThenAcceptsCorrect) {
  // A misbehaving upstream that first replies with a wrong id, then with
  // the right one.
  auto socket = net::UdpSocket::bind(net::Endpoint::parse("127.0.0.1:0"));
  auto upstream_ep = socket.local_endpoint();
  std::thread impostor([&socket] {
    auto got = socket.recv_from(std::chrono::milliseconds(2000));
    if (!got) return;
    auto query = dns::decode(got->first);
    dns::DnsMessage wrong;
    wrong.header.id = static_cast<std::uint16_t>(query.header.id + 1);
    wrong.header.qr = true;
    wrong.questions = query.questions;
    wrong.answers.push_back(a_record("victim.example", 60, 66));
    wrong.sync_counts();
    socket.send_to(dns::encode(wrong), got->second);

    dns::DnsMessage right = wrong;
    right.header.id = query.header.id;
    right.answers = {a_record("victim.example", 60, 99)};
    right.sync_counts();
    socket.send_to(dns::encode(right), got->second);
  });

  dns::Question q{parse_name("victim.example"), dns::qtype::a, dns::qclass::in};
  auto response =
      forward_upstream(q, upstream_ep, std::chrono::milliseconds(1500), 0);
  impostor.join();
  ASSERT_EQ(response.answers.size(), 1u);
  EXPECT_EQ(std::get<dns::ARecord>(response.answers[0].rdata),
            (dns::ARecord{{10, 0, 0, 99}}));
}

// ---------------------------------------------------------------------------
// Server, validator mode

struct TestClient {
  net::UdpSocket socket = net::UdpSocket::open();

  std::optional<dns::DnsMessage> ask(const net::Endpoint& server,
                                     const std::string& name,
                                     std::uint16_t id = 0x2222,
                                     std::uint16_t type = dns::qtype::a,
                                     int timeout_ms = 2000) {
    auto query = dns::make_query(id, parse_name(name), type);
    socket.send_to(dns::encode(query), server);
    auto got = socket.recv_from(std::chrono::milliseconds(timeout_ms));
    if (!got) return std::nullopt;
    return dns::decode(got->first);
  }
};

config::ServiceConfig validator_config(const net::Endpoint& upstream) {
  auto cfg = config::default_config();
  cfg.listen = net::Endpoint::parse("127.0.0.1:0");
  cfg.mode = config::Mode::Validator;
  cfg.upstream = upstream;
  cfg.timeout = std::chrono::milliseconds(400);
  cfg.retries = 0;
  cfg.workers = 4;
  return cfg;
}

features::Dictionary test_dictionary() {
  return features::Dictionary::load(TV_DATA_DIR "/dictionary.txt");
}

std::vector<logging::LogRecord> parse_log(const std::string& text) {
  std::vector<logging::LogRecord> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty())
      out.push_back(logging::LogRecord::from_json(nlohmann::json::parse(line)));
  return out;
}

TEST(ValidatorServer, SecureQueryForwardedThenCached) {
  StubScript script;
  script.default_behavior = StubBehavior::answer({192, 0, 2, 1}, 300);
  StubUpstream stub(std::move(script));
  std::ostringstream log;
  Server server(validator_config(stub.endpoint()), test_dictionary(),
                registry::Registry{}, &log);
  server.start();

  TestClient client;
  auto r1 = client.ask(server.endpoint(), "www.example.com", 0x0a0a);
  ASSERT_TRUE(r1);
  EXPECT_EQ(r1->header.id, 0x0a0a);
  EXPECT_TRUE(r1->header.qr);
  ASSERT_EQ(r1->answers.size(), 1u);
  EXPECT_EQ(stub.count_for(parse_name("www.example.com")), 1u);

  auto r2 = client.ask(server.endpoint(), "www.example.com", 0x0b0b);
  ASSERT_TRUE(r2);
  EXPECT_EQ(r2->header.id, 0x0b0b);
  ASSERT_EQ(r2->answers.size(), 1u);
  // No second upstream transaction: the cache served it.
  EXPECT_EQ(stub.count_for(parse_name("www.example.com")), 1u);

  server.sink().flush();
  auto records = parse_log(log.str());
  std::size_t inbound = 0, outbound = 0, cache_hits = 0;
  for (const auto& r : records) {
    if (r.direction == logging::Direction::Inbound) {
      ++inbound;
      if (r.action == logging::Action::ServedCache) {
        ++cache_hits;
        EXPECT_TRUE(r.cache_hit);
      }
    } else {
      ++outbound;
    }
  }
  EXPECT_EQ(inbound, 2u);
  EXPECT_EQ(outbound, 1u);
  EXPECT_EQ(cache_hits, 1u);
  server.stop();
}

TEST(ValidatorServer, InboundAndOutboundShareCorrelation) {
  StubScript script;
  script.default_behavior = StubBehavior::answer({192, 0, 2, 1}, 60);
  StubUpstream stub(std::move(script));
  std::ostringstream log;
  Server server(validator_config(stub.endpoint()), test_dictionary(),
                registry::Registry{}, &log);
  server.start();
  TestClient client;
  ASSERT_TRUE(client.ask(server.endpoint(), "mail.example.net"));
  server.sink().flush();
  auto records = parse_log(log.str());
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].correlation, records[1].correlation);
  EXPECT_EQ(records[0].qname, records[1].qname);
  server.stop();
}

TEST(ValidatorServer, BlacklistedQueryBlockedPerPolicy) {
  for (auto policy : {config::BlockPolicy::NxDomain,
                      config::BlockPolicy::ServFail, config::BlockPolicy::Drop}) {
    StubScript script;
    script.default_behavior = StubBehavior::answer({192, 0, 2, 1}, 300);
    StubUpstream stub(std::move(script));
    registry::Registry reg;
    reg.blacklist_add(parse_name("evil.example"),
                      registry::Provenance::Imported, 1);
    auto cfg = validator_config(stub.endpoint());
    cfg.policy = policy;
    std::ostringstream log;
    Server server(cfg, test_dictionary(), std::move(reg), &log);
    server.start();

    TestClient client;
    auto response = client.ask(server.endpoint(), "x.evil.example", 0x0c0c,
                               dns::qtype::a, 600);
    if (policy == config::BlockPolicy::Drop) {
      EXPECT_FALSE(response) << "drop policy must stay silent";
    } else {
      ASSERT_TRUE(response);
      EXPECT_EQ(response->header.rcode,
                policy == config::BlockPolicy::NxDomain ? dns::rcode::nxdomain
                                                        : dns::rcode::servfail);
      EXPECT_EQ(response->header.id, 0x0c0c);
      ASSERT_EQ(response->questions.size(), 1u);
      EXPECT_EQ(response->questions[0].qname, parse_name("x.evil.example"));
    }
    // The core property: blocked queries generate zero upstream packets.
    EXPECT_EQ(stub.query_count(), 0u);

    server.sink().flush();
    auto records = parse_log(log.str());
    ASSERT_EQ(records.size(), 1u);
    EXPECT_EQ(records[0].direction, logging::Direction::Inbound);
    EXPECT_EQ(records[0].action, policy == config::BlockPolicy::Drop
                                     ? logging::Action::Dropped
                                     : logging::Action::Blocked);
    ASSERT_TRUE(records[0].verdict);
    EXPECT_EQ(records[0].verdict->reason, classifier::Reason::Blacklisted);
    server.stop();
  }
}

TEST(ValidatorServer, MultiQuestionGetsFormerr) {
  StubScript script;
  StubUpstream stub(std::move(script));
  Server server(validator_config(stub.endpoint()), test_dictionary(),
                registry::Registry{});
  server.start();

  dns::DnsMessage request;
  request.header.id = 0x1dea;
  request.questions.push_back({parse_name("a.example"), 1, 1});
  request.questions.push_back({parse_name("b.example"), 1, 1});
  request.sync_counts();
  net::UdpSocket client = net::UdpSocket::open();
  client.send_to(dns::encode(request), server.endpoint());
  auto got = client.recv_from(std::chrono::milliseconds(1000));
  ASSERT_TRUE(got);
  auto response = dns::decode(got->first);
  EXPECT_EQ(response.header.rcode, dns::rcode::formerr);
  EXPECT_EQ(response.header.id, 0x1dea);
  server.stop();
}

TEST(ValidatorServer, UndecodableInputHandling) {
  StubScript script;
  StubUpstream stub(std::move(script));
  Server server(validator_config(stub.endpoint()), test_dictionary(),
                registry::Registry{});
  server.start();

  net::UdpSocket client = net::UdpSocket::open();
  // Headered garbage: header + an unterminated label -> FORMERR.
  std::vector<std::uint8_t> headered = {0xbe, 0xef, 0x00, 0x00, 0x00, 0x01,
                                        0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
                                        0x3f, 0x41};
  client.send_to(headered, server.endpoint());
  auto got = client.recv_from(std::chrono::milliseconds(1000));
  ASSERT_TRUE(got);
  auto response = dns::decode(got->first);
  EXPECT_EQ(response.header.rcode, dns::rcode::formerr);
  EXPECT_EQ(response.header.id, 0xbeef);

  // Less than a header: silence.
  std::vector<std::uint8_t> runt = {1, 2, 3};
  client.send_to(runt, server.endpoint());
  EXPECT_FALSE(client.recv_from(std::chrono::milliseconds(300)));
  server.stop();
}

TEST(ValidatorServer, UpstreamTimeoutYieldsServfail) {
  StubScript script;
  script.default_behavior = StubBehavior::silence();
  StubUpstream stub(std::move(script));
  auto cfg = validator_config(stub.endpoint());
  cfg.timeout = std::chrono::milliseconds(150);
  Server server(cfg, test_dictionary(), registry::Registry{});
  server.start();
  TestClient client;
  auto response = client.ask(server.endpoint(), "slow.example.org", 1, 1, 2000);
  ASSERT_TRUE(response);
  EXPECT_EQ(response->header.rcode, dns::rcode::servfail);
  server.stop();
}

TEST(ValidatorServer, ConcurrentIdenticalQueriesCoalesce) {
  StubScript script;
  script.default_behavior =
      StubBehavior::answer({192, 0, 2, 9}, 300)
          .with_latency(std::chrono::milliseconds(150));
  StubUpstream stub(std::move(script));
  auto cfg = validator_config(stub.endpoint());
  cfg.timeout = std::chrono::milliseconds(1000);
  Server server(cfg, test_dictionary(), registry::Registry{});
  server.start();

  constexpr int kClients = 8;
  std::vector<std::thread> threads;
  std::atomic<int> answered{0};
  for (int i = 0; i < kClients; ++i) {
    threads.emplace_back([&server, &answered, i] {
      TestClient client;
      auto r = client.ask(server.endpoint(), "popular.example.com",
                          static_cast<std::uint16_t>(100 + i), dns::qtype::a,
                          3000);
      if (r && r->answers.size() == 1) ++answered;
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(answered.load(), kClients);
  // One upstream transaction for the whole burst.
  EXPECT_EQ(stub.count_for(parse_name("popular.example.com")), 1u);
  server.stop();
}

TEST(ValidatorServer, LogReplayReproducesVerdicts) {
  StubScript script;
  // Distinct answers so the uniformity tracker never flags the zone.
  script.default_behavior = StubBehavior::answer({192, 0, 2, 3}, 300);
  StubUpstream stub(std::move(script));
  registry::Registry reg;
  reg.blacklist_add(parse_name("evil.example"), registry::Provenance::Imported,
                    1);
  std::ostringstream log;
  Server server(validator_config(stub.endpoint()), test_dictionary(),
                registry::Registry(reg), &log);
  server.start();
  TestClient client;
  client.ask(server.endpoint(), "www.example.com");
  client.ask(server.endpoint(), "x.evil.example", 2, dns::qtype::a, 600);
  client.ask(server.endpoint(), "mail.shop.example.net");
  server.sink().flush();

  // Replay inbound records through a fresh classifier against the same
  // registry snapshot; zone stats stayed below min_samples throughout.
  classifier::Classifier offline(config::default_config().classifier,
                                 test_dictionary());
  uniformity::UniformityTracker empty_zones;
  auto records = parse_log(log.str());
  std::size_t replayed = 0;
  for (const auto& r : records) {
    if (r.direction != logging::Direction::Inbound) continue;
    auto again =
        offline.classify(parse_name(r.qname), reg, empty_zones, r.cache_hit);
    ASSERT_TRUE(r.verdict);
    EXPECT_EQ(again, *r.verdict) << r.qname;
    ++replayed;
  }
  EXPECT_EQ(replayed, 3u);
  server.stop();
}

// ---------------------------------------------------------------------------
// Server, splitter mode

config::ServiceConfig splitter_config(const net::Endpoint& normal,
                                      const net::Endpoint& validator) {
  auto cfg = config::default_config();
  cfg.listen = net::Endpoint::parse("127.0.0.1:0");
  cfg.mode = config::Mode::Splitter;
  cfg.upstream_normal = normal;
  cfg.upstream_validator = validator;
  cfg.timeout = std::chrono::milliseconds(400);
  cfg.retries = 0;
  return cfg;
}

TEST(SplitterServer, RoutesByHeuristicVerdict) {
  StubScript normal_script;
  normal_script.default_behavior = StubBehavior::answer({192, 0, 2, 10}, 60);
  StubUpstream normal(std::move(normal_script));
  StubScript validator_script;
  validator_script.default_behavior = StubBehavior::answer({192, 0, 2, 20}, 60);
  StubUpstream validator(std::move(validator_script));

  Server server(splitter_config(normal.endpoint(), validator.endpoint()),
                test_dictionary(), registry::Registry{});
  server.start();
  TestClient client;

  auto benign = client.ask(server.endpoint(), "www.example.com");
  ASSERT_TRUE(benign);
  EXPECT_EQ(std::get<dns::ARecord>(benign->answers.at(0).rdata),
            (dns::ARecord{{192, 0, 2, 10}}));
  EXPECT_EQ(normal.query_count(), 1u);
  EXPECT_EQ(validator.query_count(), 0u);

  // 100 payload bytes: long enough to classify insecure, short enough that
  // the uncompressed answer still fits a 512-octet response.
  traffic_lab::CorpusSpec spec;
  spec.kind = traffic_lab::CorpusSpec::Kind::Tunnel;
  spec.count = 1;
  spec.seed = 5;
  spec.payload_min = spec.payload_max = 100;
  auto tunnel_name = traffic_lab::gen_tunnel(spec)[0];
  auto suspicious = client.ask(server.endpoint(), tunnel_name);
  ASSERT_TRUE(suspicious);
  EXPECT_EQ(std::get<dns::ARecord>(suspicious->answers.at(0).rdata),
            (dns::ARecord{{192, 0, 2, 20}}));
  EXPECT_EQ(normal.query_count(), 1u);
  EXPECT_EQ(validator.query_count(), 1u);

  // Each routed response left exactly one uniformity record in its zone.
  auto z1 = server.tracker().stats(
      uniformity::ZoneKey::of(parse_name("www.example.com"), 2));
  ASSERT_TRUE(z1);
  EXPECT_EQ(z1->total_responses, 1u);
  auto z2 = server.tracker().stats(
      uniformity::ZoneKey::of(parse_name(tunnel_name), 2));
  ASSERT_TRUE(z2);
  EXPECT_EQ(z2->total_responses, 1u);
  server.stop();
}

TEST(SplitterServer, UpstreamTimeoutRelaysServfailAndRecordsTimeout) {
  StubScript normal_script;
  normal_script.default_behavior = StubBehavior::silence();
  StubUpstream normal(std::move(normal_script));
  StubScript validator_script;
  StubUpstream validator(std::move(validator_script));

  auto cfg = splitter_config(normal.endpoint(), validator.endpoint());
  cfg.timeout = std::chrono::milliseconds(150);
  Server server(cfg, test_dictionary(), registry::Registry{});
  server.start();
  TestClient client;
  auto response = client.ask(server.endpoint(), "quiet.example.org", 9,
                             dns::qtype::a, 2000);
  ASSERT_TRUE(response);
  EXPECT_EQ(response->header.rcode, dns::rcode::servfail);
  auto stats = server.tracker().stats(
      uniformity::ZoneKey::of(parse_name("quiet.example.org"), 2));
  ASSERT_TRUE(stats);
  EXPECT_EQ(stats->outcome_counts.at("TIMEOUT"), 1u);
  server.stop();
}

TEST(SplitterServer, UniformZoneFlipsRoutingAfterEnoughEvidence) {
  StubScript normal_script;
  normal_script.zones.push_back({"tun.example", StubBehavior::nxdomain()});
  normal_script.default_behavior = StubBehavior::answer({192, 0, 2, 30}, 60);
  StubUpstream normal(std::move(normal_script));
  StubScript validator_script;
  validator_script.default_behavior = StubBehavior::nxdomain();
  StubUpstream validator(std::move(validator_script));

  Server server(splitter_config(normal.endpoint(), validator.endpoint()),
                test_dictionary(), registry::Registry{});
  server.start();
  TestClient client;

  auto words = test_dictionary().sorted_words();
  for (int i = 0; i < 25; ++i) {
    auto name = words[100 + i] + ".tun.example";
    auto r = client.ask(server.endpoint(), name);
    ASSERT_TRUE(r) << name;
    EXPECT_EQ(r->header.rcode, dns::rcode::nxdomain);
  }
  // The zone reaches min_samples after 20 uniform responses, so the last
  // five queries already routed to the validator upstream.
  EXPECT_EQ(normal.query_count(), 20u);
  EXPECT_EQ(validator.query_count(), 5u);

  auto r = client.ask(server.endpoint(), "grove.tun.example");
  ASSERT_TRUE(r);
  EXPECT_EQ(normal.query_count(), 20u);
  EXPECT_EQ(validator.query_count(), 6u);
  server.stop();
}

}  // namespace
