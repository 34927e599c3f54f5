#include "deepcov/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "deepcov/error.hpp"
#include "deepcov/fingerprint.hpp"
#include "deepcov/raster.hpp"
#include "deepcov/rng.hpp"

namespace deepcov::nn {

using raster::format_double;

ArchConfig ArchConfig::standard() { return standard_with_width(128); }

ArchConfig ArchConfig::standard_with_width(std::size_t channels) {
  ArchConfig a;
  for (std::size_t stride : {2, 2, 2, 1, 1}) a.conv_layers.push_back({channels, 3, stride, 1, 0.05, 0.2});
  a.pool = 2;
  a.dense_layers = {{256, 0.2}, {128, 0.2}};
  return a;
}

ArchConfig ArchConfig::from_kv(const KvConfig& kv) {
  ArchConfig a;
  if (auto v = kv.get("input_size")) a.input_size = static_cast<std::size_t>(parse_int(*v, "input_size"));
  if (auto v = kv.get("pool")) a.pool = static_cast<std::size_t>(parse_int(*v, "pool"));
  if (auto v = kv.get("seed")) a.seed = static_cast<std::uint64_t>(parse_int(*v, "seed"));
  for (const std::string& line : kv.get_all("conv")) {
    const auto f = split(line, ',');
    if (f.size() != 6)
      throw Error(ErrorKind::Parse, "conv entry needs out_channels,kernel,stride,padding,noise_sigma,dropout: '" + line + "'");
    ConvLayerSpec c;
    c.out_channels = static_cast<std::size_t>(parse_int(f[0], "conv out_channels"));
    c.kernel = static_cast<std::size_t>(parse_int(f[1], "conv kernel"));
    c.stride = static_cast<std::size_t>(parse_int(f[2], "conv stride"));
    c.padding = static_cast<std::size_t>(parse_int(f[3], "conv padding"));
    c.noise_sigma = parse_double(f[4], "conv noise_sigma");
    c.dropout_rate = parse_double(f[5], "conv dropout");
    a.conv_layers.push_back(c);
  }
  for (const std::string& line : kv.get_all("dense")) {
    const auto f = split(line, ',');
    if (f.size() != 2) throw Error(ErrorKind::Parse, "dense entry needs width,dropout: '" + line + "'");
    a.dense_layers.push_back({static_cast<std::size_t>(parse_int(f[0], "dense width")),
                              parse_double(f[1], "dense dropout")});
  }
  if (kv.get_all("conv").empty() && kv.get_all("dense").empty() && !kv.has("no_layers")) {
    ArchConfig d = standard();
    a.conv_layers = d.conv_layers;
    a.dense_layers = d.dense_layers;
  }
  shape_trace(a);
  return a;
}

KvConfig ArchConfig::to_kv() const {
  KvConfig kv;
  kv.append("input_size", std::to_string(input_size));
  for (const ConvLayerSpec& c : conv_layers)
    kv.append("conv", std::to_string(c.out_channels) + "," + std::to_string(c.kernel) + "," +
                          std::to_string(c.stride) + "," + std::to_string(c.padding) + "," +
                          format_double(c.noise_sigma) + "," + format_double(c.dropout_rate));
  kv.append("pool", std::to_string(pool));
  for (const DenseLayerSpec& d : dense_layers)
    kv.append("dense", std::to_string(d.width) + "," + format_double(d.dropout_rate));
  if (conv_layers.empty() && dense_layers.empty()) kv.append("no_layers", "1");
  kv.append("seed", std::to_string(seed));
  return kv;
}

std::string ArchConfig::fingerprint() const {
  ArchConfig copy = *this;
  copy.seed = 0;
  return sha256_hex(copy.to_kv().to_string());
}

std::vector<LayerShape> shape_trace(const ArchConfig& arch) {
  std::vector<LayerShape> out;
  if (arch.input_size == 0) throw Error(ErrorKind::Shape, "input size must be positive");
  std::size_t c = 1, s = arch.input_size;
  out.push_back({"input", {c, s, s}});
  for (std::size_t l = 0; l < arch.conv_layers.size(); ++l) {
    const ConvLayerSpec& spec = arch.conv_layers[l];
    if (spec.out_channels == 0 || spec.kernel == 0 || spec.stride == 0)
      throw Error(ErrorKind::Shape, "conv" + std::to_string(l) + ": zero channels, kernel or stride");
    const long span = static_cast<long>(s + 2 * spec.padding) - static_cast<long>(spec.kernel);
    if (span < 0)
      throw Error(ErrorKind::Shape, "conv" + std::to_string(l) + ": kernel larger than padded spatial " +
                                        std::to_string(s));
    s = static_cast<std::size_t>(span) / spec.stride + 1;
    c = spec.out_channels;
    if (!(spec.dropout_rate >= 0 && spec.dropout_rate < 1) || !(spec.noise_sigma >= 0))
      throw Error(ErrorKind::InvalidArgument, "conv" + std::to_string(l) + ": bad dropout or noise");
    out.push_back({"conv" + std::to_string(l), {c, s, s}});
  }
  if (arch.pool == 0) throw Error(ErrorKind::Shape, "pool must be >= 1");
  if (arch.pool > 1) {
    if (s % arch.pool != 0)
      throw Error(ErrorKind::Shape, "pool " + std::to_string(arch.pool) + " does not divide spatial " + std::to_string(s));
    s /= arch.pool;
    out.push_back({"pool", {c, s, s}});
  }
  std::size_t f = c * s * s;
  out.push_back({"flatten", {f}});
  for (std::size_t l = 0; l < arch.dense_layers.size(); ++l) {
    const DenseLayerSpec& d = arch.dense_layers[l];
    if (d.width == 0) throw Error(ErrorKind::Shape, "dense" + std::to_string(l) + ": zero width");
    if (!(d.dropout_rate >= 0 && d.dropout_rate < 1))
      throw Error(ErrorKind::InvalidArgument, "dense" + std::to_string(l) + ": bad dropout");
    f = d.width;
    out.push_back({"dense" + std::to_string(l), {f}});
  }
  out.push_back({"output", {1}});
  return out;
}

std::size_t ModelParameters::count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : tensors) n += v.value().size();
  return n;
}

const ag::Var& ModelParameters::get(const std::string& name) const {
  for (const auto& [n, v] : tensors)
    if (n == name) return v;
  throw Error(ErrorKind::InvalidArgument, "no parameter named '" + name + "'");
}

ModelParameters ModelParameters::clone() const {
  ModelParameters out;
  for (const auto& [name, v] : tensors) out.tensors.emplace_back(name, ag::Var(v.value(), v.requires_grad()));
  return out;
}

void ModelParameters::copy_values_from(const ModelParameters& other) {
  if (other.tensors.size() != tensors.size()) throw Error(ErrorKind::Shape, "parameter list mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].second.shape() != other.tensors[i].second.shape())
      throw Error(ErrorKind::Shape, "parameter '" + tensors[i].first + "' shape mismatch");
    tensors[i].second.mutable_value() = other.tensors[i].second.value();
  }
}

void ModelParameters::zero_grads() {
  for (auto& [name, v] : tensors) v.zero_grad();
}

std::size_t parameter_count(const ModelParameters& params) { return params.count(); }

ModelParameters build_network(const ArchConfig& arch, std::uint64_t seed) {
  const auto trace = shape_trace(arch);
  ModelParameters p;
  std::size_t c = 1, layer = 0;
  auto he_uniform = [&](ag::Shape shape, std::size_t fan_in) {
    ag::Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    Rng rng = make_rng(seed, {streams::kInit, layer});
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : t.data()) v = u(rng);
    return ag::Var(std::move(t), true);
  };
  for (std::size_t l = 0; l < arch.conv_layers.size(); ++l, ++layer) {
    const ConvLayerSpec& s = arch.conv_layers[l];
    p.tensors.emplace_back("conv" + std::to_string(l) + ".weight",
                           he_uniform({s.out_channels, c, s.kernel, s.kernel}, c * s.kernel * s.kernel));
    p.tensors.emplace_back("conv" + std::to_string(l) + ".bias", ag::Var(ag::Tensor({s.out_channels}), true));
    c = s.out_channels;
  }
  std::size_t f = 0;
  for (const auto& ls : trace)
    if (ls.layer == "flatten") f = ls.shape[0];
  auto add_dense = [&](const std::string& name, std::size_t width) {
    p.tensors.emplace_back(name + ".weight", he_uniform({f, width}, f));
    p.tensors.emplace_back(name + ".bias", ag::Var(ag::Tensor({width}), true));
    f = width;
    ++layer;
  };
  for (std::size_t l = 0; l < arch.dense_layers.size(); ++l)
    add_dense("dense" + std::to_string(l), arch.dense_layers[l].width);
  add_dense("output", 1);
  return p;
}

ag::Var forward(const ModelParameters& params, const ArchConfig& arch, const ag::Var& batch,
                ag::Mode mode, std::uint64_t noise_seed, std::vector<LayerShape>* trace) {
  const ag::Shape& in = batch.shape();
  if (in.size() != 4 || in[1] != 1 || in[2] != arch.input_size || in[3] != arch.input_size)
    throw Error(ErrorKind::Shape, "forward: batch " + ag::shape_string(in) + " does not match input size " +
                                      std::to_string(arch.input_size));
  const std::size_t expected = 2 * (arch.conv_layers.size() + arch.dense_layers.size() + 1);
  if (params.tensors.size() != expected) throw Error(ErrorKind::Shape, "forward: parameter list does not match architecture");

  auto record = [&](const std::string& name, const ag::Var& v) {
    if (!trace) return;
    const ag::Shape& s = v.shape();
    trace->push_back({name, ag::Shape(s.begin() + 1, s.end())});
  };
  record("input", batch);

  ag::Var x = batch;
  std::size_t t = 0, layer = 0;
  for (std::size_t l = 0; l < arch.conv_layers.size(); ++l, ++layer) {
    const ConvLayerSpec& s = arch.conv_layers[l];
    Rng noise_rng = make_rng(noise_seed, {layer, 0});
    Rng drop_rng = make_rng(noise_seed, {layer, 1});
    x = ag::gaussian_noise(x, s.noise_sigma, mode, noise_rng);
    x = ag::conv2d(x, params.tensors[t].second, params.tensors[t + 1].second, {s.stride, s.padding});
    t += 2;
    x = ag::relu(x);
    x = ag::dropout(x, s.dropout_rate, mode, drop_rng);
    record("conv" + std::to_string(l), x);
  }
  if (arch.pool > 1) {
    x = ag::avg_pool2d(x, arch.pool);
    record("pool", x);
  }
  x = ag::flatten(x);
  record("flatten", x);
  for (std::size_t l = 0; l < arch.dense_layers.size(); ++l, ++layer) {
    Rng drop_rng = make_rng(noise_seed, {layer, 1});
    x = ag::dense(x, params.tensors[t].second, params.tensors[t + 1].second);
    t += 2;
    x = ag::relu(x);
    x = ag::dropout(x, arch.dense_layers[l].dropout_rate, mode, drop_rng);
    record("dense" + std::to_string(l), x);
  }
  x = ag::dense(x, params.tensors[t].second, params.tensors[t + 1].second);
  record("output", x);
  return ag::reshape(x, {in[0]});
}

ag::Tensor pack_batch(std::span<const data::Patch* const> patches, std::size_t k) {
  ag::Tensor t({patches.size(), 1, k, k});
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (patches[i]->k != k) throw Error(ErrorKind::Shape, "patch window does not match network input");
    std::copy(patches[i]->values.begin(), patches[i]->values.end(), t.ptr() + i * k * k);
  }
  return t;
}

std::vector<double> predict(const Model& model, std::span<const data::Patch* const> patches,
                            std::size_t batch_size) {
  if (batch_size == 0) throw Error(ErrorKind::InvalidArgument, "batch size must be positive");
  ag::NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(patches.size());
  for (std::size_t first = 0; first < patches.size(); first += batch_size) {
    const std::size_t n = std::min(batch_size, patches.size() - first);
    ag::Var batch(pack_batch(patches.subspan(first, n), model.arch.input_size));
    const ag::Var y = forward(model.params, model.arch, batch, ag::Mode::Eval);
    for (std::size_t i = 0; i < n; ++i) out.push_back(y.value()[i] * model.target_sd + model.target_mean);
  }
  return out;
}

namespace {

static_assert(std::endian::native == std::endian::little, "parameter files are little-endian");

struct ParsedFile {
  nlohmann::json header;
  std::vector<double> payload;
};

ParsedFile read_param_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open parameter file '" + path.string() + "'");
  std::string magic, header_line;
  if (!std::getline(in, magic) || magic != kParamMagic)
    throw Error(ErrorKind::Format, "'" + path.string() + "' is not a deepcov parameter file (bad magic)");
  if (!std::getline(in, header_line)) throw Error(ErrorKind::Format, "parameter file header missing");
  ParsedFile pf;
  try {
    pf.header = nlohmann::json::parse(header_line);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::Format, std::string("parameter file header: ") + e.what());
  }
  if (pf.header.value("version", -1) != kParamFormatVersion)
    throw Error(ErrorKind::Format, "unsupported parameter file version");
  const std::size_t n = pf.header.at("values").get<std::size_t>();
  pf.payload.resize(n);
  in.read(reinterpret_cast<char*>(pf.payload.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != n * sizeof(double))
    throw Error(ErrorKind::Format, "parameter file payload truncated");
  if (in.peek() != std::char_traits<char>::eof()) throw Error(ErrorKind::Format, "parameter file has trailing bytes");
  return pf;
}

Model model_from_file(const ParsedFile& pf) {
  Model m;
  std::istringstream arch_text(pf.header.at("arch").get<std::string>());
  m.arch = ArchConfig::from_kv(KvConfig::parse(arch_text));
  if (m.arch.fingerprint() != pf.header.at("arch_fingerprint").get<std::string>())
    throw Error(ErrorKind::Format, "parameter file architecture fingerprint is inconsistent");
  m.target_mean = pf.header.at("target_mean").get<double>();
  m.target_sd = pf.header.at("target_sd").get<double>();
  m.params = build_network(m.arch, 0);
  std::size_t offset = 0;
  const auto& specs = pf.header.at("tensors");
  if (specs.size() != m.params.tensors.size()) throw Error(ErrorKind::Format, "parameter file tensor list mismatch");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto& [name, var] = m.params.tensors[i];
    if (specs[i].at("name").get<std::string>() != name ||
        specs[i].at("shape").get<ag::Shape>() != var.shape())
      throw Error(ErrorKind::Format, "parameter file tensor '" + name + "' mismatch");
    auto dst = var.mutable_value().data();
    if (offset + dst.size() > pf.payload.size()) throw Error(ErrorKind::Format, "parameter payload too short");
    std::copy(pf.payload.begin() + static_cast<long>(offset),
              pf.payload.begin() + static_cast<long>(offset + dst.size()), dst.begin());
    offset += dst.size();
  }
  if (offset != pf.payload.size()) throw Error(ErrorKind::Format, "parameter payload length mismatch");
  return m;
}

}  // namespace

void save_model(const Model& model, const std::filesystem::path& path) {
  nlohmann::ordered_json h;
  h["version"] = kParamFormatVersion;
  h["arch_fingerprint"] = model.arch.fingerprint();
  h["arch"] = model.arch.to_kv().to_string();
  h["target_mean"] = model.target_mean;
  h["target_sd"] = model.target_sd;
  nlohmann::ordered_json specs = nlohmann::ordered_json::array();
  for (const auto& [name, v] : model.params.tensors) specs.push_back({{"name", name}, {"shape", v.shape()}});
  h["tensors"] = specs;
  h["values"] = model.params.count();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write parameter file '" + path.string() + "'");
  out << kParamMagic << '\n' << h.dump() << '\n';
  for (const auto& [name, v] : model.params.tensors)
    out.write(reinterpret_cast<const char*>(v.value().ptr()),
              static_cast<std::streamsize>(v.value().size() * sizeof(double)));
  if (!out) throw Error(ErrorKind::Io, "failed writing parameter file");
}

Model load_model(const std::filesystem::path& path) { return model_from_file(read_param_file(path)); }

Model load_model(const std::filesystem::path& path, const ArchConfig& arch) {
  ParsedFile pf = read_param_file(path);
  if (pf.header.at("arch_fingerprint").get<std::string>() != arch.fingerprint())
    throw Error(ErrorKind::Format, "parameter file '" + path.string() + "' was saved for a different architecture");
  return model_from_file(pf);
}

void save_parameters(const ModelParameters& params, const ArchConfig& arch, const std::filesystem::path& path) {
  save_model(Model{arch, params, 0.0, 1.0}, path);
}

ModelParameters load_parameters(const std::filesystem::path& path, const ArchConfig& arch) {
  return load_model(path, arch).params;
}

}  // namespace deepcov::nn
