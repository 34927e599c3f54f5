#include <doctest.h>

#include <cmath>
#include <fstream>

#include "deepcov/error.hpp"
#include "deepcov/gradcheck.hpp"
#include "deepcov/network.hpp"
#include "support.hpp"

using namespace deepcov;
using namespace deepcov::nn;

namespace {

ArchConfig small_arch() {
  ArchConfig a;
  a.input_size = 8;
  a.conv_layers = {{4, 3, 2, 1, 0.05, 0.1}, {4, 3, 1, 1, 0.05, 0.1}};
  a.pool = 2;
  a.dense_layers = {{6, 0.1}};
  return a;
}

std::vector<data::Patch> random_patches(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<data::Patch> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> raw = testing::uniform_values(k * k, -50, 50, seed + i);
    out.push_back(data::normalize_patch(raw, k, 20.0));
  }
  return out;
}

std::vector<const data::Patch*> ptrs(const std::vector<data::Patch>& v) {
  std::vector<const data::Patch*> p;
  for (const auto& x : v) p.push_back(&x);
  return p;
}

}  // namespace

TEST_CASE("standard architecture shape trace and parameter count") {
  const ArchConfig a = ArchConfig::standard();
  const auto trace = shape_trace(a);
  std::vector<std::pair<std::string, ag::Shape>> expected = {
      {"input", {1, 32, 32}},   {"conv0", {128, 16, 16}}, {"conv1", {128, 8, 8}}, {"conv2", {128, 4, 4}},
      {"conv3", {128, 4, 4}},   {"conv4", {128, 4, 4}},   {"pool", {128, 2, 2}},  {"flatten", {512}},
      {"dense0", {256}},        {"dense1", {128}},        {"output", {1}}};
  REQUIRE(trace.size() == expected.size());
  for (std::size_t i = 0; i < trace.size(); ++i) {
    CHECK(trace[i].layer == expected[i].first);
    CHECK(trace[i].shape == expected[i].second);
  }
  CHECK(parameter_count(build_network(a, 1)) == 755969);
}

TEST_CASE("parameter counts of small configurations") {
  ArchConfig one;
  one.input_size = 5;
  one.pool = 1;
  CHECK(parameter_count(build_network(one, 1)) == 5 * 5 + 1);

  ArchConfig conv_only;
  conv_only.input_size = 3;
  conv_only.conv_layers = {{1, 3, 1, 0, 0.0, 0.0}};
  conv_only.pool = 1;
  const ModelParameters p = build_network(conv_only, 1);
  CHECK(p.get("conv0.weight").value().size() + p.get("conv0.bias").value().size() == 10);
  CHECK(ModelParameters{}.count() == 0);
}

TEST_CASE("inconsistent shapes are rejected") {
  ArchConfig a = small_arch();
  a.pool = 3;
  CHECK_THROWS_AS(shape_trace(a), Error);
  a = small_arch();
  a.conv_layers[0].kernel = 13;
  CHECK_THROWS_AS(shape_trace(a), Error);
  a = small_arch();
  a.conv_layers[0].dropout_rate = 1.0;
  CHECK_THROWS_AS(shape_trace(a), Error);
}

TEST_CASE("initialisation: deterministic, He-uniform bounds, zero biases") {
  const ArchConfig a = small_arch();
  const ModelParameters p1 = build_network(a, 5), p2 = build_network(a, 5), p3 = build_network(a, 6);
  bool differs = false;
  for (std::size_t i = 0; i < p1.tensors.size(); ++i) {
    CHECK(p1.tensors[i].first == p2.tensors[i].first);
    CHECK(p1.tensors[i].second.value() == p2.tensors[i].second.value());
    differs |= !(p1.tensors[i].second.value() == p3.tensors[i].second.value());
  }
  CHECK(differs);
  const auto& w = p1.get("conv1.weight").value();
  const double bound = std::sqrt(6.0 / (4 * 3 * 3));
  for (double v : w.storage()) CHECK(std::fabs(v) <= bound);
  for (double v : p1.get("conv1.bias").value().storage()) CHECK(v == 0.0);
  const double dbound = std::sqrt(6.0 / 16.0);
  for (double v : p1.get("dense0.weight").value().storage()) CHECK(std::fabs(v) <= dbound);
}

TEST_CASE("forward behaviour") {
  const ArchConfig a = small_arch();
  ModelParameters p = build_network(a, 3);
  const auto patches = random_patches(5, 8, 10);
  const ag::Var x(pack_batch(ptrs(patches), 8));

  SUBCASE("zero parameters give zero predictions") {
    ModelParameters z = p.clone();
    for (auto& [n, v] : z.tensors) v.mutable_value().fill(0.0);
    const ag::Var out = forward(z, a, x, ag::Mode::Eval);
    for (double y : out.value().storage()) CHECK(y == 0.0);
  }
  SUBCASE("eval mode is deterministic; train mode depends on the noise seed") {
    const auto e1 = forward(p, a, x, ag::Mode::Eval).value();
    const auto e2 = forward(p, a, x, ag::Mode::Eval, 999).value();
    CHECK(e1 == e2);
    const auto t1 = forward(p, a, x, ag::Mode::Train, 1).value();
    const auto t2 = forward(p, a, x, ag::Mode::Train, 1).value();
    const auto t3 = forward(p, a, x, ag::Mode::Train, 2).value();
    CHECK(t1 == t2);
    CHECK_FALSE(t1 == t3);
  }
  SUBCASE("single-sample forward equals the batch row-wise (bit-exact)") {
    const auto batch = forward(p, a, x, ag::Mode::Eval).value();
    for (std::size_t i = 0; i < patches.size(); ++i) {
      const data::Patch* one[] = {&patches[i]};
      const ag::Var xi(pack_batch(one, 8));
      CHECK(forward(p, a, xi, ag::Mode::Eval).value()[0] == batch[i]);
    }
  }
  SUBCASE("shape mismatch is an error") {
    const ag::Var wrong(ag::Tensor({2, 1, 6, 6}, 0.0));
    CHECK_THROWS_AS(forward(p, a, wrong, ag::Mode::Eval), Error);
  }
  SUBCASE("trace matches shape_trace") {
    std::vector<LayerShape> tr;
    forward(p, a, x, ag::Mode::Eval, 0, &tr);
    const auto st = shape_trace(a);
    REQUIRE(tr.size() == st.size());
    for (std::size_t i = 0; i < tr.size(); ++i) CHECK(tr[i].shape == st[i].shape);
  }
}

TEST_CASE("predict un-standardises and ignores batching") {
  const ArchConfig a = small_arch();
  Model m{a, build_network(a, 4), 3.0, 2.0};
  const auto patches = random_patches(9, 8, 50);
  const auto p = ptrs(patches);
  const auto all = predict(m, p, 256);
  const auto small = predict(m, p, 2);
  CHECK(all == small);
  const ag::Var x(pack_batch(p, 8));
  const auto raw = forward(m.params, a, x, ag::Mode::Eval).value();
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == raw[i] * 2.0 + 3.0);
}

TEST_CASE("raw elevation shifts do not change predictions") {
  const ArchConfig a = small_arch();
  Model m{a, build_network(a, 4), 0.0, 1.0};
  std::vector<data::Patch> base, shifted;
  for (std::uint64_t s = 0; s < 6; ++s) {
    std::vector<double> raw = testing::uniform_values(64, -100, 100, s);
    for (double& v : raw) v = std::round(v * 256) / 256;
    std::vector<double> up = raw;
    for (double& v : up) v += 812.25;
    base.push_back(data::normalize_patch(raw, 8, 30.0));
    shifted.push_back(data::normalize_patch(up, 8, 30.0));
  }
  CHECK(predict(m, ptrs(base)) == predict(m, ptrs(shifted)));
}

TEST_CASE("architecture config text round trip") {
  const ArchConfig a = small_arch();
  const ArchConfig b = ArchConfig::from_kv(a.to_kv());
  CHECK(a == b);
  CHECK(a.fingerprint() == b.fingerprint());
  ArchConfig c = a;
  c.seed = 77;
  CHECK(c.fingerprint() == a.fingerprint());
  c.dense_layers[0].width = 7;
  CHECK(c.fingerprint() != a.fingerprint());
  CHECK(ArchConfig::from_kv(KvConfig{}) .conv_layers == ArchConfig::standard().conv_layers);
  std::istringstream bad("conv = 1,2,3\n");
  CHECK_THROWS_AS(ArchConfig::from_kv(KvConfig::parse(bad)), Error);
}

TEST_CASE("parameter files") {
  testing::TempDir dir("params");
  const ArchConfig a = small_arch();
  Model m{a, build_network(a, 8), 1.25, 0.5};
  save_model(m, dir / "m.params");
  const Model back = load_model(dir / "m.params");
  CHECK(back.arch == a);
  CHECK(back.target_mean == 1.25);
  CHECK(back.target_sd == 0.5);
  REQUIRE(back.params.tensors.size() == m.params.tensors.size());
  for (std::size_t i = 0; i < back.params.tensors.size(); ++i)
    CHECK(back.params.tensors[i].second.value() == m.params.tensors[i].second.value());

  save_parameters(m.params, a, dir / "p.params");
  const ModelParameters pp = load_parameters(dir / "p.params", a);
  CHECK(pp.tensors[0].second.value() == m.params.tensors[0].second.value());

  ArchConfig other = a;
  other.dense_layers[0].width = 5;
  CHECK_THROWS_AS(load_model(dir / "m.params", other), Error);

  std::string bytes = testing::read_text(dir / "m.params");
  bytes[0] = 'X';
  testing::write_text(dir / "bad.params", bytes);
  CHECK_THROWS_AS(load_model(dir / "bad.params"), Error);

  std::string cut = testing::read_text(dir / "m.params");
  testing::write_text(dir / "short.params", cut.substr(0, cut.size() - 9));
  CHECK_THROWS_AS(load_model(dir / "short.params"), Error);
}

TEST_CASE("network gradients pass the finite-difference check") {
  ArchConfig a = small_arch();
  const ModelParameters p = build_network(a, 12);
  const auto patches = random_patches(4, 8, 70);
  const ag::Var x(pack_batch(ptrs(patches), 8));
  const ag::Var target(ag::Tensor({4}, {0.5, -0.2, 1.0, 0.1}));
  std::vector<std::pair<std::string, ag::Var>> named(p.tensors.begin(), p.tensors.end());
  const auto report = ag::grad_check(
      [&] { return ag::mse_loss(forward(p, a, x, ag::Mode::Train, 5), target); }, named, ag::GradCheckOptions{});
  CHECK(report.passed);
  CHECK(report.max_rel_error < 1e-4);
}
