#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "fedfusion/fusion.hpp"
#include "fedfusion/metrics.hpp"
#include "properties.hpp"
#include "support.hpp"

using namespace fedfusion;

namespace {

Tensor vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor random_simplex(std::size_t k, Rng& rng) {
  Tensor t({k});
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += (t[i] = rng.uniform() + 1e-3);
  for (std::size_t i = 0; i < k; ++i) t[i] /= s;
  return t;
}

ArchitectureOptions tiny_options() {
  ArchitectureOptions o;
  o.height = o.width = 8;
  o.conv_width = 2;
  o.vgg_hidden1 = 8;
  o.vgg_hidden2 = 4;
  o.head_units = 4;
  o.dense_block = {2, 2, 2};
  o.swin.embed_dim = 8;
  o.swin.num_heads = 2;
  o.swin.window_size = 2;
  return o;
}

}  // namespace

TEST_SUITE("fusion") {
  TEST_CASE("summing four members picks class 1") {
    const std::vector<Tensor> members{vec({0.6, 0.3, 0.1}), vec({0.1, 0.6, 0.3}), vec({0.5, 0.4, 0.1}),
                                      vec({0.2, 0.2, 0.6})};
    const Tensor sum = fuse(members, FusionMode::Sum);
    CHECK(sum[0] == doctest::Approx(1.4).epsilon(1e-15));
    CHECK(sum[1] == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(sum[2] == doctest::Approx(1.1).epsilon(1e-15));
    CHECK(argmax(sum.data()) == 1);
    const Tensor avg = fuse(members, FusionMode::Average);
    CHECK(avg[1] == doctest::Approx(0.375));
  }

  TEST_CASE("averaging identical members returns the member") {
    const Tensor p = vec({0.2, 0.7, 0.1});
    // Average is Sum / n: exact for two members, within an ulp otherwise.
    CHECK(fuse(std::vector<Tensor>{p, p}, FusionMode::Average) == p);
    CHECK(testing::max_abs_diff(fuse(std::vector<Tensor>{p, p, p}, FusionMode::Average), p) <= 2e-16);
    CHECK(testing::max_abs_diff(fuse(std::vector<Tensor>{p, p, p, p}, FusionMode::Average), p) <= 2e-16);
  }

  TEST_CASE("three confident votes outweigh one dissent") {
    const std::vector<Tensor> members{vec({0.9, 0.05, 0.05}), vec({0.9, 0.05, 0.05}), vec({0.9, 0.05, 0.05}),
                                      vec({0.3, 0.4, 0.3})};
    CHECK(argmax(fuse(members, FusionMode::Sum).data()) == 0);
  }

  TEST_CASE("sum and average agree on the argmax of 1000 random ensembles") {
    Rng rng(11);
    for (int t = 0; t < 1000; ++t) {
      const std::size_t n = 2 + rng.below(3);
      std::vector<Tensor> members;
      for (std::size_t m = 0; m < n; ++m) members.push_back(random_simplex(3, rng));
      const Tensor s = fuse(members, FusionMode::Sum), a = fuse(members, FusionMode::Average);
      REQUIRE(argmax(s.data()) == argmax(a.data()));
      CHECK(std::abs(a[0] + a[1] + a[2] - 1.0) <= 1e-9);
    }
  }

  TEST_CASE("member order does not matter") {
    Rng rng(12);
    std::vector<Tensor> members;
    for (int m = 0; m < 4; ++m) members.push_back(random_simplex(3, rng));
    std::vector<Tensor> reversed(members.rbegin(), members.rend());
    for (FusionMode mode : kAllFusionModes) {
      CHECK(testing::max_abs_diff(fuse(members, mode), fuse(reversed, mode)) <= 1e-15);
    }
  }

  TEST_CASE("ties go to the lowest class index") {
    const std::vector<Tensor> members{vec({0.1, 0.45, 0.45}), vec({0.1, 0.45, 0.45})};
    CHECK(argmax(fuse(members, FusionMode::Sum).data()) == 1);
    CHECK(fuse_rows(std::vector<Tensor>{Tensor({1, 3}, {0.5, 0.5, 0.0}), Tensor({1, 3}, {0.5, 0.5, 0.0})},
                    FusionMode::Average, true)[0]
              .class_index == 0);
  }

  TEST_CASE("bad inputs are rejected") {
    CHECK_THROWS(fuse(std::vector<Tensor>{}, FusionMode::Sum));
    CHECK_THROWS(fuse(std::vector<Tensor>{vec({0.5, 0.5}), vec({0.2, 0.3, 0.5})}, FusionMode::Sum));
    CHECK_THROWS(fuse(std::vector<Tensor>{vec({0.5, 0.6, 0.1}), vec({0.2, 0.3, 0.5})}, FusionMode::Sum));
    // Raw scores skip the simplex check.
    CHECK_NOTHROW(fuse_scores(std::vector<Tensor>{vec({2.0, -1.0, 0.5}), vec({0.2, 0.3, 0.5})}, FusionMode::Sum));
  }

  TEST_CASE("mode names") {
    CHECK(fusion_mode_name(FusionMode::Sum) == "Sum");
    CHECK(fusion_display_name(FusionMode::Average) == "Fusion(Average)");
  }

  TEST_CASE("an ensemble of built models fuses member probabilities") {
    const ArchitectureOptions o = tiny_options();
    std::vector<ModelArtifact> artifacts;
    for (ArchitectureId arch : kAllArchitectures) {
      Model m = build_model(arch, o);
      artifacts.push_back(export_artifact(m));
    }
    EnsembleModel ens(artifacts, o, FusionMode::Sum);
    CHECK(ens.members().size() == 4);
    Rng rng(3);
    const Tensor batch = testing::random_tensor({5, 8, 8, 1}, rng, 0.0, 1.0);
    const auto outs = ens.member_outputs(batch);
    const auto preds = ensemble_predict_batch(ens, batch);
    REQUIRE(preds.size() == 5);
    for (std::size_t n = 0; n < 5; ++n) {
      std::vector<double> want(3, 0.0);
      for (const auto& o2 : outs) {
        for (std::size_t c = 0; c < 3; ++c) want[c] += o2.at(n, c);
      }
      for (std::size_t c = 0; c < 3; ++c) CHECK(preds[n].scores[c] == doctest::Approx(want[c]).epsilon(1e-12));
      CHECK(preds[n].class_index == argmax(want));
    }
    const auto single = ensemble_predict(ens, batch.slice(2));
    CHECK(single.class_index == preds[2].class_index);

    ens.set_mode(FusionMode::Average);
    const auto avg = ensemble_predict_batch(ens, batch);
    for (std::size_t n = 0; n < 5; ++n) CHECK(avg[n].class_index == preds[n].class_index);
  }

  TEST_CASE("ensembles need two compatible members") {
    const ArchitectureOptions o = tiny_options();
    Model m = build_tiny_vgg(o);
    const ModelArtifact a = export_artifact(m);
    CHECK_THROWS_AS(EnsembleModel({a}, o, FusionMode::Sum), std::invalid_argument);
    ArchitectureOptions wide = o;
    wide.conv_width = 3;
    Model other = build_tiny_vgg(wide);
    try {
      EnsembleModel({a, export_artifact(other)}, o, FusionMode::Sum);
      FAIL("mismatched member accepted");
    } catch (const std::invalid_argument& e) {
      CHECK(std::string(e.what()).find("member 1") != std::string::npos);
    }
  }
}

TEST_SUITE("metrics") {
  TEST_CASE("hand-tallied confusion matrix") {
    const std::vector<std::size_t> truth{0, 0, 1, 2}, pred{0, 1, 1, 2};
    const ConfusionMatrix cm = confusion_matrix(truth, pred, 3);
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(0, 1) == 1);
    CHECK(cm.at(1, 1) == 1);
    CHECK(cm.at(2, 2) == 1);
    CHECK(cm.total() == 4);
    CHECK(cm.trace() == 3);
    CHECK(cm.accuracy() == 0.75);
  }

  TEST_CASE("perfect and constant predictions") {
    const std::vector<std::size_t> truth{0, 1, 2, 1}, zeros{0, 0, 0, 0};
    const ConfusionMatrix perfect = confusion_matrix(truth, truth, 3);
    CHECK(perfect.trace() == perfect.total());
    const ConfusionMatrix col = confusion_matrix(truth, zeros, 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(col.at(i, 1) == 0);
      CHECK(col.at(i, 2) == 0);
    }
    const std::vector<std::size_t> bad{0, 3, 1, 1};
    CHECK_THROWS(confusion_matrix(truth, bad, 3));
  }

  TEST_CASE("AUC examples") {
    const std::vector<double> s{0.9, 0.8, 0.3, 0.2};
    const bool l[] = {true, false, true, false};
    CHECK(roc_curve(s, l).auc == 0.75);
    const bool sep[] = {true, true, false, false};
    CHECK(roc_curve(s, sep).auc == 1.0);
    const std::vector<double> flat{0.4, 0.4, 0.4, 0.4};
    CHECK(roc_curve(flat, l).auc == 0.5);
    const bool one_class[] = {true, true, true, true};
    CHECK_THROWS(roc_curve(s, one_class));
  }

  TEST_CASE("trapezoid AUC matches pairwise concordance") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      auto v = testing::auc_matches_concordance(seed);
      CHECK_MESSAGE(v.ok, v.detail);
    }
  }

  TEST_CASE("one-vs-rest uses the class column") {
    const std::vector<std::vector<double>> scores{{0.8, 0.1, 0.1}, {0.2, 0.7, 0.1}, {0.3, 0.3, 0.4}, {0.6, 0.2, 0.2}};
    const std::vector<std::size_t> labels{0, 1, 2, 0};
    for (std::size_t c = 0; c < 3; ++c) CHECK(roc_auc_ovr(scores, labels, c).auc == 1.0);
    CHECK(macro_auc(scores, labels, 3) == 1.0);
  }

  TEST_CASE("comparison table round-trips and carries six rows") {
    const std::vector<ComparisonRow> rows{{"VGG-19", 12.5, 0.25, 94.4},          {"Inception V3", 20.0, 0.5, 94.5},
                                          {"DenseNet 201", 30.75, 0.75, 94.1},   {"SWIN Transformer", 60.0, 1.0, 82.5},
                                          {"Fusion(Sum)", 123.25, 2.5, 96.24},  {"Fusion(Average)", 123.25, 2.5, 96.24}};
    const std::string csv = comparison_csv(rows);
    CHECK(csv.rfind(std::string(kComparisonHeader) + "\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
    CHECK(csv.find("94.40") != std::string::npos);
    CHECK(parse_comparison_csv(csv) == rows);
    CHECK_THROWS(comparison_csv({}));
    CHECK_THROWS(comparison_csv({{"x", -1.0, 0.0, 50.0}}));
    CHECK_THROWS(comparison_csv({{"x", 1.0, 0.0, 101.0}}));
  }

  TEST_CASE("training curves have one row per epoch and recompute their losses") {
    CHECK(training_curves_csv({}) == "epoch,train_acc,val_acc,train_loss,val_loss\n");
    const LabeledDataset ds = generate_synthetic(6, 8, 0.1, 2);
    ArchitectureOptions o = tiny_options();
    Model m = build_tiny_vgg(o);
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.batch_size = 6;
    const TrainingHistory h = train(m, ds, &ds, cfg);
    const std::string csv = training_curves_csv(h);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);
    for (const auto& e : h.epochs) {
      double loss = 0.0;
      for (std::size_t i = 0; i < e.validation_labels.size(); ++i) {
        loss -= std::log(std::max(e.validation_probabilities[i][e.validation_labels[i]], 1e-12));
      }
      loss /= static_cast<double>(e.validation_labels.size());
      CHECK(e.validation_loss == doctest::Approx(loss).epsilon(1e-12));
    }
  }

  TEST_CASE("metric records survive CSV and feed the comparison table") {
    const std::vector<std::vector<double>> scores{{0.8, 0.1, 0.1}, {0.2, 0.7, 0.1}, {0.3, 0.3, 0.4}, {0.6, 0.2, 0.2}};
    const std::vector<std::size_t> labels{0, 1, 2, 1};
    ClassifierMetrics a = compute_metrics("VGG-19", scores, labels, 3);
    a.training_time_s = 3.0;
    ClassifierMetrics b = compute_metrics("DenseNet 201", scores, labels, 3);
    b.training_time_s = 4.5;
    ClassifierMetrics f = compute_metrics("Fusion(Sum)", scores, labels, 3);
    CHECK(a.accuracy == 0.75);
    CHECK(a.confusion.accuracy() == a.accuracy);
    auto records = metric_records(a);
    for (auto& r : metric_records(b)) records.push_back(r);
    for (auto& r : metric_records(f)) records.push_back(r);
    const auto back = parse_metrics_csv(metrics_csv(records));
    REQUIRE(back.size() == records.size());
    for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i].value == records[i].value);
    const auto rows = comparison_rows(back);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].accuracy_percent == 75.0);
    CHECK(rows[2].training_time_s == 7.5);
    const std::string roc = roc_csv(a);
    CHECK(roc.rfind("classifier,class,fpr,tpr\n", 0) == 0);
  }
}
