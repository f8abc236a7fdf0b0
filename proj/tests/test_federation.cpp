#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <map>
#include <set>

#include "fedcases.hpp"
#include "fedfusion/federation.hpp"
#include "support.hpp"

using namespace fedfusion;

namespace {

LocalUpdateMsg update(std::uint32_t client, double acc) {
  LocalUpdateMsg u;
  u.client_id = client;
  u.round = 1;
  u.accuracy = acc;
  u.artifact.params = {static_cast<float>(client)};
  u.artifact.layout = {{"w", {1}}};
  return u;
}

// Evaluator that reads the accuracy from the single parameter's lookup table.
Evaluator table_evaluator(std::map<float, double> table) {
  return [table](const ModelArtifact& a) {
    if (a.params.size() != 1) throw ManifestMismatch("expects one parameter");
    return table.at(a.params[0]);
  };
}

std::vector<std::uint32_t> ids(const std::vector<LocalUpdateMsg>& v) {
  std::vector<std::uint32_t> out;
  for (const auto& u : v) out.push_back(u.client_id);
  return out;
}

}  // namespace

TEST_SUITE("selection") {
  TEST_CASE("sizes follow ceil of the fraction with a floor of one") {
    for (std::size_t n = 1; n <= 10; ++n) {
      const auto want = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.8 * static_cast<double>(n) - 1e-9)));
      CHECK(selection_size(n, 0.8) == want);
    }
    CHECK(selection_size(5, 0.8) == 4);
    CHECK(selection_size(1, 0.8) == 1);
    CHECK(selection_size(10, 0.8) == 8);
    CHECK(selection_size(3, 0.01) == 1);
    CHECK_THROWS(selection_size(3, 0.0));
    CHECK_THROWS(selection_size(3, 1.5));
  }

  TEST_CASE("ties break toward the lower client id") {
    const auto top = select_top({update(2, 0.9), update(1, 0.9), update(3, 0.5)}, 0.8);
    CHECK(ids(top) == std::vector<std::uint32_t>{1, 2, 3});
  }

  TEST_CASE("five updates keep the best four in order") {
    const auto top = select_top({update(0, 0.1), update(1, 0.7), update(2, 0.3), update(3, 0.9), update(4, 0.5)}, 0.8);
    CHECK(ids(top) == std::vector<std::uint32_t>{3, 1, 4, 2});
    CHECK(select_top({update(9, 0.2)}, 0.8).size() == 1);
    CHECK_THROWS(select_top({}, 0.8));
  }
}

TEST_SUITE("promotion") {
  TEST_CASE("strictly better local model is promoted") {
    ServerState s;
    s.global_accuracy = 0.90;
    const std::vector<LocalUpdateMsg> sel{update(1, 0.5), update(2, 0.5)};
    const auto out = promote(s, sel, table_evaluator({{1.0f, 0.95}, {2.0f, 0.85}}));
    CHECK(out.promoted);
    CHECK(out.source_client == 1u);
    CHECK(s.global_accuracy == 0.95);
    CHECK(s.global.params == std::vector<float>{1.0f});
    CHECK(s.round == 1);
  }

  TEST_CASE("equal accuracy keeps the incumbent") {
    ServerState s;
    s.global_accuracy = 0.90;
    const std::vector<LocalUpdateMsg> sel{update(1, 0.99)};
    const auto out = promote(s, sel, table_evaluator({{1.0f, 0.90}}));
    CHECK_FALSE(out.promoted);
    CHECK(s.global_accuracy == 0.90);
    CHECK(s.round == 1);
  }

  TEST_CASE("worse local model still advances the round") {
    ServerState s;
    s.global_accuracy = 0.90;
    s.round = 4;
    const std::vector<LocalUpdateMsg> sel{update(1, 1.0)};
    const auto out = promote(s, sel, table_evaluator({{1.0f, 0.80}}));
    CHECK_FALSE(out.promoted);
    CHECK(s.round == 5);
  }

  TEST_CASE("client-reported accuracy is ignored") {
    ServerState s;
    s.global_accuracy = 0.5;
    // Client 1 claims 1.0 but measures 0.6; client 2 claims 0.1 and measures 0.7.
    RoundCoordinator coord(s, table_evaluator({{1.0f, 0.6}, {2.0f, 0.7}}));
    coord.begin_round();
    coord.submit(update(1, 1.0));
    coord.submit(update(2, 0.1));
    const RoundSummary r = coord.finish_round();
    CHECK(r.promoted_client == 2u);
    CHECK(r.global_accuracy == 0.7);
  }

  TEST_CASE("mismatched artifacts are rejected and the rest continue") {
    ServerState s;
    s.global_accuracy = 0.1;
    LocalUpdateMsg odd = update(3, 0.9);
    odd.artifact.params = {1.0f, 2.0f};
    const std::vector<LocalUpdateMsg> sel{odd, update(2, 0.5)};
    const auto out = promote(s, sel, table_evaluator({{2.0f, 0.4}}));
    CHECK(out.rejected == std::vector<std::uint32_t>{3});
    CHECK(out.source_client == 2u);
  }

  TEST_CASE("coordinator ignores stale and duplicate updates") {
    ServerState s;
    RoundCoordinator coord(s, table_evaluator({{1.0f, 0.2}}));
    CHECK_FALSE(coord.submit(update(1, 0.5)));
    coord.begin_round();
    LocalUpdateMsg stale = update(1, 0.5);
    stale.round = 7;
    CHECK_FALSE(coord.submit(stale));
    CHECK(coord.submit(update(1, 0.5)));
    CHECK_FALSE(coord.submit(update(1, 0.5)));
    CHECK(coord.submitted() == 1);
  }

  TEST_CASE("average candidate is weighted by accuracy") {
    std::vector<LocalUpdateMsg> v{update(1, 0.75), update(3, 0.25)};
    const ModelArtifact avg = average_artifacts(v);
    CHECK(avg.params[0] == doctest::Approx(0.75 * 1 + 0.25 * 3));
    v[1].artifact.layout = {{"x", {1}}};
    CHECK_THROWS_AS(average_artifacts(v), ManifestMismatch);
  }
}

TEST_SUITE("sharding") {
  TEST_CASE("iid shards are equal, stratified and a partition") {
    const LabeledDataset ds = generate_synthetic(100, 8, 0.1, 1);
    const auto shards = shard_dataset(ds, 3, ShardMode::Iid, 4);
    std::multiset<std::size_t> seen;
    for (const auto& s : shards) {
      CHECK(s.size() == 100);
      for (std::size_t c : s.class_counts()) CHECK(std::abs(static_cast<double>(c) - 100.0 / 3.0) <= 1.0);
      for (const auto& x : s.samples) seen.insert(x.id);
    }
    CHECK(seen.size() == ds.size());
    CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == ds.size());
  }

  TEST_CASE("label skew gives every client a dominant class") {
    const LabeledDataset ds = generate_synthetic(60, 8, 0.1, 1);
    for (std::size_t n : {3u, 4u, 5u, 7u}) {
      const auto shards = shard_dataset(ds, n, ShardMode::LabelSkew, 2);
      std::size_t total = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const auto counts = shards[k].class_counts();
        const double dom = static_cast<double>(counts[k % 3]) / static_cast<double>(shards[k].size());
        CHECK_MESSAGE(dom >= 0.7, n, " clients, client ", k, ": ", dom);
        total += shards[k].size();
      }
      CHECK(total == ds.size());
    }
    CHECK_THROWS(shard_dataset(ds, 2, ShardMode::LabelSkew, 2));
  }

  TEST_CASE("iid needs enough samples per class") {
    const LabeledDataset ds = generate_synthetic(4, 8, 0.1, 1);
    CHECK_THROWS_AS(shard_dataset(ds, 5, ShardMode::Iid, 1), std::invalid_argument);
    CHECK(parse_shard_mode("label_skew") == ShardMode::LabelSkew);
    CHECK_THROWS(parse_shard_mode("dirichlet"));
  }
}

TEST_SUITE("federation") {
  TEST_CASE("empty shards hand back the global model and nothing is promoted") {
    const auto cfg = testing::small_federation(3, 3, 2);
    const auto data = testing::federation_data(3);
    RoundCoordinator coord = make_coordinator(cfg, data.validation);
    const ModelArtifact initial = coord.state().global;
    std::vector<FedClient> clients;
    for (std::uint32_t id = 0; id < 3; ++id) clients.emplace_back(id, LabeledDataset{}, cfg.arch_options, cfg.local_train, 1);
    const auto log = run_simulation(coord, clients, 2);
    for (const auto& r : log) CHECK_FALSE(r.promoted);
    CHECK(coord.state().global == initial);
  }

  TEST_CASE("same seed, same rounds") {
    const auto cfg = testing::small_federation(5, 3, 3);
    const auto data = testing::federation_data(5);
    const auto a = testing::simulate(cfg, data), b = testing::simulate(cfg, data);
    CHECK(a == b);
    CHECK(round_log_csv(a) == round_log_csv(b));
  }

  TEST_CASE("the client holding five times more data wins round one") {
    auto cfg = testing::small_federation(8, 3, 1);
    cfg.local_train.epochs = 6;
    const LabeledDataset pool = generate_synthetic(35, 8, 0.15, 8);
    const LabeledDataset validation = generate_synthetic(20, 8, 0.15, 9);
    std::vector<LabeledDataset> shards(3);
    // Client 0 gets 5 samples per class for every 1 the others get.
    std::array<std::size_t, 3> per_class{};
    for (const auto& s : pool.samples) {
      const std::size_t k = per_class[s.label]++ % 7;
      shards[k < 5 ? 0 : k - 4].samples.push_back(s);
    }
    REQUIRE(shards[0].size() == 5 * shards[1].size());
    RoundCoordinator coord = make_coordinator(cfg, validation);
    Evaluator eval = validation_evaluator(cfg.arch_options, validation);
    std::vector<FedClient> clients;
    for (std::uint32_t id = 0; id < 3; ++id) clients.emplace_back(id, shards[id], cfg.arch_options, cfg.local_train, cfg.seed);

    const GlobalModelMsg gm = coord.begin_round();
    std::vector<double> measured;
    for (auto& c : clients) {
      LocalUpdateMsg u = c.handle(gm);
      measured.push_back(eval(u.artifact));
      coord.submit(std::move(u));
    }
    const RoundSummary r = coord.finish_round();
    const auto best = static_cast<std::uint32_t>(std::max_element(measured.begin(), measured.end()) - measured.begin());
    INFO("global ", coord.state().global_accuracy, " measured ", measured[0], " ", measured[1], " ", measured[2]);
    REQUIRE(r.promoted);
    CHECK(r.promoted_client == best);
    CHECK(r.promoted_client == 0u);
  }

  TEST_CASE("global accuracy never drops over ten rounds") {
    const auto cfg = testing::small_federation(11, 5, 10);
    const auto data = testing::federation_data(11);
    const auto log = testing::simulate(cfg, data);
    REQUIRE(log.size() == 10);
    for (std::size_t i = 1; i < log.size(); ++i) CHECK(log[i].global_accuracy >= log[i - 1].global_accuracy);
    for (const auto& r : log) CHECK(r.selected.size() == 4);
  }

  TEST_CASE("averaging candidate can be promoted under its own id") {
    auto cfg = testing::small_federation(12, 4, 3);
    cfg.aggregate_average = true;
    const auto data = testing::federation_data(12);
    const auto log = testing::simulate(cfg, data);
    for (std::size_t i = 1; i < log.size(); ++i) CHECK(log[i].global_accuracy >= log[i - 1].global_accuracy);
    for (const auto& r : log) {
      if (r.promoted_client) CHECK((*r.promoted_client < 4 || *r.promoted_client == kAggregateClientId));
    }
  }

  TEST_CASE("no training pixels cross the wire") {
    const auto cfg = testing::small_federation(13, 3, 2);
    const auto data = testing::federation_data(13);
    std::vector<std::vector<std::uint8_t>> frames;
    testing::simulate(cfg, data, [&](std::span<const std::uint8_t> f) { frames.emplace_back(f.begin(), f.end()); });
    REQUIRE(frames.size() == 2 * 3 * 3 + 3);
    // Four consecutive interior pixels of each sample, as float32 and as float64.
    std::size_t probes = 0, hits = 0;
    for (const auto& s : data.pool.samples) {
      for (std::size_t start = 0; start + 4 <= s.image.size(); start += 4) {
        bool interior = true;
        for (std::size_t i = 0; i < 4; ++i) interior &= s.image[start + i] > 0.0 && s.image[start + i] < 1.0;
        if (!interior) continue;
        std::vector<std::uint8_t> f32(16), f64(32);
        for (std::size_t i = 0; i < 4; ++i) {
          const float f = static_cast<float>(s.image[start + i]);
          std::memcpy(f32.data() + 4 * i, &f, 4);
          std::memcpy(f64.data() + 8 * i, &s.image.data()[start + i], 8);
        }
        ++probes;
        for (const auto& fr : frames) {
          if (std::search(fr.begin(), fr.end(), f32.begin(), f32.end()) != fr.end()) ++hits;
          if (std::search(fr.begin(), fr.end(), f64.begin(), f64.end()) != fr.end()) ++hits;
        }
      }
    }
    CHECK(probes > 100);
    CHECK(hits == 0);
    // Only protocol messages: everything decodes and none carries a sample.
    for (const auto& fr : frames) CHECK_NOTHROW(decode(fr));
  }

  TEST_CASE("quorum is enforced") {
    auto cfg = testing::small_federation(14, 2, 1);
    cfg.min_clients = 2;
    const auto data = testing::federation_data(14);
    RoundCoordinator coord = make_coordinator(cfg, data.validation);
    std::vector<FedClient> one;
    one.push_back(make_client(cfg, data.pool, 0));
    CHECK_THROWS(run_round(coord, one));
    cfg.min_clients = 3;
    CHECK_THROWS(cfg.validate());
  }

  TEST_CASE("round log CSV") {
    std::vector<RoundSummary> log(2);
    log[0].round = 1;
    log[0].promoted = true;
    log[0].promoted_client = 2;
    log[0].global_accuracy = 0.5;
    log[1].round = 2;
    log[1].global_accuracy = 0.5;
    CHECK(round_log_csv(log) == "round,promoted,promoted_client,global_accuracy\n1,1,2,0.5\n2,0,,0.5\n");
  }
}

TEST_SUITE("transport") {
  TEST_CASE("loopback session reproduces the simulation") {
    const auto cfg = testing::small_federation(21, 3, 3);
    const auto data = testing::federation_data(21);
    const auto sim = testing::simulate(cfg, data);
    const auto tcp = testing::tcp_session(cfg, data);
    CHECK(testing::promoted_sequence(tcp.log) == testing::promoted_sequence(sim));
    CHECK(tcp.log == sim);
    for (std::size_t served : tcp.rounds_served) CHECK(served == 3);
  }

  TEST_CASE("connecting to a closed port fails") {
    const auto cfg = testing::small_federation(22, 1, 1);
    const auto data = testing::federation_data(22);
    FedClient c = make_client(cfg, data.pool, 0);
    CHECK_THROWS(run_client(ClientOptions{"127.0.0.1", 1}, c));
  }

  TEST_CASE("missing clients abort the session") {
    auto cfg = testing::small_federation(23, 2, 1);
    cfg.min_clients = 2;
    const auto data = testing::federation_data(23);
    RoundCoordinator coord = make_coordinator(cfg, data.validation);
    ServerOptions so;
    so.expected_clients = 2;
    so.register_timeout = std::chrono::milliseconds(300);
    CHECK_THROWS_AS(run_server(so, coord), TransportError);
  }
}
