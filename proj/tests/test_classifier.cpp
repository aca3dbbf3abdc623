#include <cmath>
#include <fstream>
#include <random>

#include "doctest.h"
#include "patchseg/classifier.hpp"
#include "patchseg/error.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace patchseg;

using oracle::separable_toy;
using oracle::toy_data;
using oracle::Toy;

namespace {

template <typename Scalar>
Batch<Scalar> random_batch(int rows, int cols, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Batch<Scalar> b(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) b(r, c) = static_cast<Scalar>(u(rng));
  }
  return b;
}

ClassifierConfig toy_config() {
  ClassifierConfig c;
  c.epochs = 50;
  c.per_label = 200;
  c.seed = 4;
  return c;
}

}  // namespace

TEST_CASE("architecture descriptors") {
  const auto ref = parse_architecture(reference_architecture());
  CHECK(ref.size() == 12);
  CHECK(to_string(ref) == reference_architecture());
  CHECK(to_string(parse_architecture("conv5s2:8, relu,pool3 fc:4")) == "conv5s2:8 relu pool3 fc:4");
  const auto vgg = parse_architecture(vgg16_architecture());
  int convs = 0, dense = 0;
  for (const auto& s : vgg) {
    convs += s.kind == LayerKind::kConv;
    dense += s.kind == LayerKind::kDense;
  }
  CHECK(convs == 13);
  CHECK(dense == 3);
  CHECK_THROWS_AS(parse_architecture("conv3"), ConfigError);
  CHECK_THROWS_AS(parse_architecture("conv3:0"), ConfigError);
  CHECK_THROWS_AS(parse_architecture("tanh"), ConfigError);
  CHECK_THROWS_AS(parse_architecture(""), ConfigError);
  CHECK_THROWS_AS(Network<float>(parse_architecture("pool4 fc:8"), Shape{1, 2, 2}), ConfigError);

  Network<float> net(ref, Shape{32, 32, 32});
  CHECK(net.outputs() == 8);
  // 3x3 convs 32->16->32->64, then 64*4*4 -> 128 -> 8.
  CHECK(net.parameter_count() == (288 * 16 + 16) + (144 * 32 + 32) + (288 * 64 + 64) + (1024 * 128 + 128) +
                                     (128 * 8 + 8));
}

TEST_CASE("learning-rate schedule") {
  ClassifierConfig c;
  CHECK(c.learning_rate(0) == 1e-3);
  CHECK(c.learning_rate(199) == 1e-9);
  CHECK(c.learning_rate(100) == doctest::Approx(1e-3 * std::pow(1e-6, 100.0 / 199.0)).epsilon(1e-12));
  for (int e = 1; e < 200; ++e) CHECK(c.learning_rate(e) < c.learning_rate(e - 1));
  c.schedule = LrSchedule::kStep;
  CHECK(c.learning_rate(49) == 1e-3);
  CHECK(c.learning_rate(50) == doctest::Approx(1e-4));

  ClassifierConfig bad;
  bad.lr_end = 1e-2;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.lr_end = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.architecture = "fc:7";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  ClassifierConfig{}.validate();
}

TEST_CASE("analytic gradient matches central differences") {
  for (const char* arch : {"conv3:3 relu pool2 fc:4", "conv3s2:2 relu fc:5 relu fc:3", "fc:6 relu fc:4"}) {
    CAPTURE(arch);
    Network<double> net(parse_architecture(arch), Shape{2, 6, 6}, Init::kFanIn, 17);
    const int outputs = net.outputs();
    const Batch<double> x = random_batch<double>(5, 72, 3);
    std::vector<int> y;
    for (int i = 0; i < 5; ++i) y.push_back(i % outputs);
    net.loss_and_gradient(x, y);
    auto params = net.params();
    std::vector<Eigen::MatrixXd> grads;
    for (auto* p : params) grads.push_back(p->grad);

    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t which = rng() % params.size();
      auto& value = params[which]->value;
      const Eigen::Index idx = static_cast<Eigen::Index>(rng() % value.size());
      const double h = 1e-6;
      const double saved = value(idx);
      value(idx) = saved + h;
      const double up = net.loss_and_gradient(x, y);
      value(idx) = saved - h;
      const double down = net.loss_and_gradient(x, y);
      value(idx) = saved;
      const double fd = (up - down) / (2 * h);
      const double an = grads[which](idx);
      CHECK(std::abs(fd - an) <= 1e-4 * std::max({std::abs(fd), std::abs(an), 1e-6}));
    }
  }
}

TEST_CASE("softmax outputs and zero model") {
  Network<float> net(parse_architecture(reference_architecture()), Shape{3, 16, 16}, Init::kFanIn, 1);
  const Batch<float> x = random_batch<float>(7, 3 * 256, 9) * 50.0f;
  const Batch<float> p = net.predict(x);
  for (int r = 0; r < p.rows(); ++r) {
    CHECK(p.row(r).minCoeff() >= 0.0f);
    CHECK(std::abs(p.row(r).sum() - 1.0f) < 1e-6f);
  }
  Network<float> zero(parse_architecture(reference_architecture()), Shape{3, 16, 16}, Init::kZero);
  const Batch<float> q = zero.predict(x);
  for (int r = 0; r < q.rows(); ++r) {
    for (int c = 0; c < 8; ++c) CHECK(q(r, c) == 0.125f);
  }
  CHECK_THROWS_AS(net.predict(random_batch<float>(2, 10, 1)), ConfigError);
}

TEST_CASE("batch gradient does not depend on sample order") {
  Network<double> net(parse_architecture("conv3:4 relu pool2 fc:8 relu fc:8"), Shape{2, 8, 8}, Init::kFanIn, 2);
  Batch<double> x = random_batch<double>(12, 128, 6);
  std::vector<int> y;
  for (int i = 0; i < 12; ++i) y.push_back((i * 5) % 8);
  const double loss = net.loss_and_gradient(x, y);
  std::vector<Eigen::MatrixXd> g;
  for (auto* p : net.params()) g.push_back(p->grad);

  std::vector<int> order(12);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), std::mt19937_64(8));
  Batch<double> xp(12, 128);
  std::vector<int> yp;
  for (int i = 0; i < 12; ++i) {
    xp.row(i) = x.row(order[i]);
    yp.push_back(y[order[i]]);
  }
  CHECK(std::abs(net.loss_and_gradient(xp, yp) - loss) < 1e-12);
  const auto params = net.params();
  for (std::size_t i = 0; i < params.size(); ++i) CHECK((params[i]->grad - g[i]).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("separable toy set is fitted within 50 epochs") {
  const Toy toy = separable_toy(200);
  ClassifierConfig c = toy_config();
  c.per_label = 5000;
  TrainReport report;
  const Model model = train(toy_data(toy), c, &report,
                            [](const EpochStats& e) { return !(e.accuracy == 1.0 && e.loss < 0.01); });
  REQUIRE(!report.epochs.empty());
  CHECK(report.epochs.size() <= 50);
  CHECK(report.epochs.back().accuracy == 1.0);
  CHECK(report.epochs.back().loss < 0.01);

  std::vector<const FeatureGrid*> grids;
  std::vector<FeatureGrid> storage(toy.samples.size());
  for (std::size_t i = 0; i < toy.samples.size(); ++i) {
    storage[i].data = toy.samples[i];
    grids.push_back(&storage[i]);
  }
  const Batch<float> p = predict(model, grids);
  for (std::size_t i = 0; i < toy.samples.size(); ++i) {
    Eigen::Index arg;
    p.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
    CHECK(arg == toy.labels[i]);
  }
  CHECK(report.table().find("total seconds") != std::string::npos);
}

TEST_CASE("toy loss is monotone over 5-epoch windows") {
  const Toy toy = separable_toy(200);
  TrainReport report;
  train(toy_data(toy), toy_config(), &report);
  REQUIRE(report.epochs.size() == 50);
  CHECK(report.epochs.front().lr == 1e-3);
  CHECK(report.epochs.back().lr == 1e-9);
  CHECK(report.epochs.back().accuracy == 1.0);
  for (int e = 0; e + 5 < 50; e += 5) {
    double a = 0, b = 0;
    for (int k = 0; k < 5; ++k) {
      a += report.epochs[e + k].loss;
      b += report.epochs[e + 5 + k].loss;
    }
    CAPTURE(e);
    CHECK(b <= a);
  }
}

TEST_CASE("training is deterministic and writes checkpoints") {
  const Toy toy = separable_toy(5);
  ClassifierConfig c = toy_config();
  c.epochs = 4;
  c.per_label = 10;
  c.checkpoint_every = 2;
  c.checkpoint_dir = testutil::temp_dir("checkpoints");
  const Model a = train(toy_data(toy), c);
  const Model b = train(toy_data(toy), c);
  const auto pa = a.net.params();
  const auto pb = b.net.params();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
  CHECK(std::filesystem::exists(c.checkpoint_dir / "epoch_2.pgmd"));
  CHECK(std::filesystem::exists(c.checkpoint_dir / "epoch_4.pgmd"));
  load_model(c.checkpoint_dir / "epoch_4.pgmd");

  c.seed = 5;
  const Model d = train(toy_data(toy), c);
  CHECK(d.net.params()[0]->value != pa[0]->value);
}

TEST_CASE("non-finite loss aborts with the batch id") {
  Toy toy = separable_toy(5);
  for (auto& s : toy.samples) s[3] = std::numeric_limits<float>::infinity();
  ClassifierConfig c = toy_config();
  c.epochs = 1;
  c.per_label = 5;
  try {
    train(toy_data(toy), c);
    FAIL("expected an error");
  } catch (const SolverError& e) {
    CHECK(std::string(e.what()).find("epoch 0, batch 0") != std::string::npos);
  }
}

TEST_CASE("model file round trip and validation") {
  const auto dir = testutil::temp_dir("model");
  const Shape shape{4, 8, 8};
  const auto layers = parse_architecture("conv3:4 relu pool2 fc:16 relu fc:8");
  Model m{Network<float>(layers, shape, Init::kFanIn, 3), model_config_hash(layers, shape), "00000000deadbeef"};
  save_model(m, dir / "m.pgmd");
  const Model back = load_model(dir / "m.pgmd", {4, 8, "00000000deadbeef"});
  CHECK(back.config_hash == m.config_hash);
  CHECK(back.data_hash == m.data_hash);

  std::vector<FeatureGrid> grids(100);
  std::vector<const FeatureGrid*> ptrs;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& g : grids) {
    for (int i = 0; i < shape.size(); ++i) g.data.push_back(u(rng));
    ptrs.push_back(&g);
  }
  CHECK(predict(m, ptrs) == predict(back, ptrs));

  try {
    load_model(dir / "m.pgmd", {31, 8, ""});
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("4 input channels, data has 31") != std::string::npos);
  }
  CHECK_THROWS_AS(load_model(dir / "m.pgmd", {4, 16, ""}), ConfigError);
  CHECK_THROWS_AS(load_model(dir / "m.pgmd", {-1, -1, "1111111111111111"}), ConfigError);

  const auto size = std::filesystem::file_size(dir / "m.pgmd");
  for (auto cut : {size - 1, size / 2, std::uintmax_t{10}}) {
    std::filesystem::copy_file(dir / "m.pgmd", dir / "cut.pgmd", std::filesystem::copy_options::overwrite_existing);
    std::filesystem::resize_file(dir / "cut.pgmd", cut);
    CHECK_THROWS_AS(load_model(dir / "cut.pgmd"), LoadError);
  }
  {
    std::ofstream(dir / "m.pgmd", std::ios::app) << 'x';
    CHECK_THROWS_AS(load_model(dir / "m.pgmd"), LoadError);
  }
  // A flipped hash byte is refused.
  save_model(m, dir / "h.pgmd");
  {
    std::fstream f(dir / "h.pgmd", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    f.put('\x5a');
  }
  CHECK_THROWS_AS(load_model(dir / "h.pgmd"), LoadError);

  FeatureGrid wrong;
  wrong.data.assign(10, 0.0f);
  CHECK_THROWS_AS(predict(m, {&wrong}), ConfigError);
}
