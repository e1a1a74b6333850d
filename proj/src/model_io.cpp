#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "vcl/layers.hpp"

namespace vcl::nn {
namespace {

constexpr char kMagic[4] = {'V', 'C', 'L', 'M'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) os_.put(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) os_.put(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void array(std::span<const double> values) {
    for (double d : values) f64(d);
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  std::uint64_t bytes(int count) {
    std::uint64_t v = 0;
    for (int i = 0; i < count; ++i) {
      const int c = is_.get();
      if (c == std::char_traits<char>::eof()) throw std::runtime_error("model file truncated");
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(bytes(4)); }
  double f64() { return std::bit_cast<double>(bytes(8)); }
  void array(std::span<double> out) {
    for (double& d : out) d = f64();
  }

 private:
  std::istream& is_;
};

template <class E>
E checked_enum(std::uint32_t v, std::uint32_t max, const char* what) {
  if (v > max) throw std::runtime_error(std::string("model file has an invalid ") + what + " tag");
  return static_cast<E>(v);
}

}  // namespace

void save_model(const Mlp& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  Writer w(os);
  const MlpSpec& spec = model.spec();
  os.write(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(model.hidden_count()));
  w.u32(static_cast<std::uint32_t>(spec.activation));
  w.u32(static_cast<std::uint32_t>(spec.normalizer));
  w.u32(static_cast<std::uint32_t>(spec.dropout_kind));
  w.u32(static_cast<std::uint32_t>(spec.dropout_placement));
  w.f64(spec.dropout_rate);
  w.f64(spec.bn_momentum);
  w.f64(spec.norm_eps);
  for (const auto& layer : model.hidden()) {
    w.u32(static_cast<std::uint32_t>(layer.inputs()));
    w.u32(static_cast<std::uint32_t>(layer.outputs()));
  }
  w.u32(static_cast<std::uint32_t>(model.output().inputs()));
  w.u32(static_cast<std::uint32_t>(model.output().outputs()));

  for (std::size_t l = 0; l < model.hidden_count(); ++l) {
    w.array(model.hidden()[l].weight.data());
    w.array(model.hidden()[l].bias.data());
    if (spec.normalizer == Normalizer::batchnorm) {
      const auto& bn = model.batchnorms()[l];
      w.array(bn.gamma.data());
      w.array(bn.beta_shift.data());
      w.array(bn.running_mean);
      w.array(bn.running_var);
    } else if (spec.normalizer == Normalizer::layernorm) {
      const auto& ln = model.layernorms()[l];
      w.array(ln.gamma.data());
      w.array(ln.shift.data());
    }
  }
  w.array(model.output().weight.data());
  w.array(model.output().bias.data());
  if (!os) throw std::runtime_error("failed writing " + path);
}

Mlp load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open model file " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error(path + " is not a model file");
  Reader r(is);
  if (r.u32() != kVersion) throw std::runtime_error("unsupported model file version");
  const std::uint32_t hidden_count = r.u32();
  MlpSpec spec;
  spec.activation = checked_enum<Activation>(r.u32(), 4, "activation");
  spec.normalizer = checked_enum<Normalizer>(r.u32(), 3, "normalizer");
  spec.dropout_kind = checked_enum<DropoutKind>(r.u32(), 1, "dropout kind");
  spec.dropout_placement = checked_enum<DropoutPlacement>(r.u32(), 2, "dropout placement");
  spec.dropout_rate = r.f64();
  spec.bn_momentum = r.f64();
  spec.norm_eps = r.f64();
  spec.hidden.clear();
  std::size_t prev = 0;
  for (std::uint32_t l = 0; l <= hidden_count; ++l) {
    const std::uint32_t in = r.u32();
    const std::uint32_t out = r.u32();
    if (l == 0) spec.inputs = in;
    else if (in != prev) throw std::runtime_error("model file has inconsistent layer shapes");
    if (l < hidden_count) spec.hidden.push_back(out);
    else spec.outputs = out;
    prev = out;
  }

  Rng unused(0);
  Mlp model(spec, unused);
  for (std::size_t l = 0; l < hidden_count; ++l) {
    r.array(model.hidden()[l].weight.mutable_data());
    r.array(model.hidden()[l].bias.mutable_data());
    if (spec.normalizer == Normalizer::batchnorm) {
      auto& bn = model.batchnorms()[l];
      r.array(bn.gamma.mutable_data());
      r.array(bn.beta_shift.mutable_data());
      r.array(bn.running_mean);
      r.array(bn.running_var);
    } else if (spec.normalizer == Normalizer::layernorm) {
      auto& ln = model.layernorms()[l];
      r.array(ln.gamma.mutable_data());
      r.array(ln.shift.mutable_data());
    }
  }
  r.array(model.output().weight.mutable_data());
  r.array(model.output().bias.mutable_data());
  if (is.peek() != std::char_traits<char>::eof()) throw std::runtime_error("trailing bytes in model file");
  return model;
}

}  // namespace vcl::nn
