#include "esdmr/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "esdmr/rng.hpp"

namespace esdmr {

void validate_config(const ModelConfig& cfg) {
  if (cfg.input_channels != 1 && cfg.input_channels != 3) {
    throw std::invalid_argument("config.input_channels must be 1 or 3");
  }
  if (cfg.stem_width < 1) {
    throw std::invalid_argument("config.stem_width must be >= 1");
  }
  for (std::size_t i = 0; i < cfg.stage_widths.size(); ++i) {
    if (cfg.stage_widths[i] < 1) {
      throw std::invalid_argument("config.stage_widths must be >= 1");
    }
    if (i > 0 && cfg.stage_widths[i] < cfg.stage_widths[i - 1]) {
      throw std::invalid_argument("config.stage_widths must be non-decreasing");
    }
  }
  if (cfg.repeat < 1) {
    throw std::invalid_argument("config.repeat must be >= 1");
  }
  if (cfg.num_classes != 2) {
    throw std::invalid_argument("config.num_classes must be 2");
  }
  if (cfg.input_h < 32 || cfg.input_w < 32 || cfg.input_h % 16 != 0 ||
      cfg.input_w % 16 != 0) {
    throw std::invalid_argument(
        "config.input_size extents must be >= 32 and divisible by 16");
  }
}

std::string config_digest(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "in=" << cfg.input_channels << ";stem=" << cfg.stem_width << ";widths="
     << cfg.stage_widths[0] << ',' << cfg.stage_widths[1] << ','
     << cfg.stage_widths[2] << ',' << cfg.stage_widths[3]
     << ";repeat=" << cfg.repeat << ";dmr=" << (cfg.use_dmr ? 1 : 0)
     << ";classes=" << cfg.num_classes << ";h=" << cfg.input_h
     << ";w=" << cfg.input_w << ";seed=" << cfg.seed;
  return os.str();
}

namespace {

template <class T>
ConvParamsT<T> make_conv(Rng& rng, int cout, int cin_per_group, int kh, int kw,
                         int stride, int padding, int groups, bool bias) {
  ConvParamsT<T> p;
  p.kernel = TensorT<T>({cout, cin_per_group, kh, kw});
  const double fan_in = static_cast<double>(cin_per_group) * kh * kw;
  const double stddev = std::sqrt(2.0 / fan_in);
  T* k = p.kernel.data();
  for (std::size_t i = 0; i < p.kernel.numel(); ++i) {
    k[i] = static_cast<T>(rng.normal() * stddev);
  }
  if (bias) p.bias = TensorT<T>::zeros({cout});
  p.stride = stride;
  p.padding = padding;
  p.groups = groups;
  return p;
}

template <class T>
EsBlockParamsT<T> make_es_block(Rng& rng, int cin, int cout, int scale) {
  EsBlockParamsT<T> b;
  b.scale = scale;
  b.dw = make_conv<T>(rng, cin, 1, scale, scale, 1, (scale - 1) / 2, cin,
                      /*bias=*/false);
  b.squeeze = make_conv<T>(rng, cout, cin, 1, 1, 1, 0, 1, /*bias=*/false);
  b.bn = BatchNormStateT<T>::identity(cout);
  return b;
}

template <class T>
EsGroupParamsT<T> make_es_group(Rng& rng, int cin, int width) {
  EsGroupParamsT<T> g;
  const int scales[3] = {3, 5, 7};
  for (int i = 0; i < 3; ++i) {
    g.branches[static_cast<std::size_t>(i)] =
        make_es_block<T>(rng, cin, width, scales[i]);
  }
  g.fuse = make_conv<T>(rng, width, 3 * width, 1, 1, 1, 0, 1, /*bias=*/true);
  return g;
}

template <class T>
StageParamsT<T> make_stage(Rng& rng, int cin, int width, int repeat,
                           Resample resample, int merge_in) {
  StageParamsT<T> s;
  s.resample = resample;
  if (resample == Resample::kUp) {
    s.merge = make_conv<T>(rng, width, merge_in, 1, 1, 1, 0, 1, /*bias=*/true);
    cin = width;
  }
  s.units.reserve(static_cast<std::size_t>(repeat));
  for (int r = 0; r < repeat; ++r) {
    s.units.push_back(make_es_group<T>(rng, r == 0 ? cin : width, width));
  }
  return s;
}

template <class T>
DmrBlockParamsT<T> make_dmr(Rng& rng, int channels) {
  const int b = channels >= 2 ? channels / 2 : 1;
  DmrBlockParamsT<T> d;
  d.f3_1 = make_conv<T>(rng, b, channels, 3, 3, 1, 1, 1, false);
  d.f5_1 = make_conv<T>(rng, b, channels, 5, 5, 1, 2, 1, false);
  d.f3_2 = make_conv<T>(rng, b, 2 * b, 3, 3, 1, 1, 1, false);
  d.f5_2 = make_conv<T>(rng, b, 2 * b, 5, 5, 1, 2, 1, false);
  d.f1_3 = make_conv<T>(rng, channels, 2 * b, 1, 1, 1, 0, 1, true);
  d.f1_2 = make_conv<T>(rng, channels, channels, 1, 1, 1, 0, 1, false);
  d.bn_t1 = BatchNormStateT<T>::identity(b);
  d.bn_t2 = BatchNormStateT<T>::identity(b);
  d.bn_t3 = BatchNormStateT<T>::identity(b);
  d.bn_t4 = BatchNormStateT<T>::identity(b);
  d.bn_shortcut = BatchNormStateT<T>::identity(channels);
  return d;
}

}  // namespace

template <class T>
ModelT<T> ModelT<T>::build(const ModelConfig& cfg) {
  validate_config(cfg);
  Rng rng(cfg.seed);
  ModelT<T> m;
  m.cfg_ = cfg;

  m.input_.conv = make_conv<T>(rng, cfg.stem_width, cfg.input_channels, 3, 3,
                               1, 1, 1, /*bias=*/false);
  m.input_.bn = BatchNormStateT<T>::identity(cfg.stem_width);

  int cin = cfg.stem_width;
  for (int s = 0; s < 4; ++s) {
    const int width = cfg.stage_widths[static_cast<std::size_t>(s)];
    m.encoder_[static_cast<std::size_t>(s)] =
        make_stage<T>(rng, cin, width, cfg.repeat, Resample::kDown, 0);
    cin = width;
  }

  // One DMR per encoder skip plus one bridging stem features to the output.
  for (int s = 0; s < 4; ++s) {
    m.dmr_[static_cast<std::size_t>(s)] =
        make_dmr<T>(rng, cfg.stage_widths[static_cast<std::size_t>(s)]);
  }
  m.dmr_[4] = make_dmr<T>(rng, cfg.stem_width);

  // Decoder stage d consumes the skip of encoder stage 3-d; its width is that
  // skip's width and its merge conv sees up(previous) + skip channels.
  int prev = cfg.stage_widths[3];
  for (int d = 0; d < 4; ++d) {
    const int skip_width = cfg.stage_widths[static_cast<std::size_t>(3 - d)];
    m.decoder_[static_cast<std::size_t>(d)] = make_stage<T>(
        rng, prev, skip_width, cfg.repeat, Resample::kUp, prev + skip_width);
    prev = skip_width;
  }

  m.output_.conv = make_conv<T>(
      rng, cfg.num_classes, cfg.stage_widths[0] + cfg.stem_width, 3, 3, 1, 1,
      1, /*bias=*/false);
  m.output_.bn = BatchNormStateT<T>::identity(cfg.num_classes);
  return m;
}

template <class T>
void ModelT<T>::set_mode(Mode m) {
  const BnMode bn = m == Mode::kTrain ? BnMode::kTrain : BnMode::kInfer;
  std::vector<BatchNormStateT<T>*> states;
  states.push_back(&input_.bn);
  for (auto& s : encoder_) collect_bn_states(s, states);
  for (auto& d : dmr_) collect_bn_states(d, states);
  for (auto& s : decoder_) collect_bn_states(s, states);
  states.push_back(&output_.bn);
  for (auto* s : states) s->mode = bn;
}

template <class T>
TensorT<T> ModelT<T>::forward(TapeT<T>* tape, const TensorT<T>& image,
                              Mode mode) {
  if (image.ndim() != 4) {
    throw std::invalid_argument("forward: image must be NCHW, got " +
                                shape_to_string(image.shape()));
  }
  const int h = image.extent(2), w = image.extent(3);
  if (h < 32 || w < 32 || h % 16 != 0 || w % 16 != 0) {
    throw std::invalid_argument(
        "forward: spatial extents must be >= 32 and divisible by 16, got " +
        shape_to_string(image.shape()));
  }
  set_mode(mode);
  if (tape) {
    for (ParamRefT<T>& p : parameters()) {
      p.tensor->set_requires_grad(true);
      tape->watch(*p.tensor);
    }
  }

  TensorT<T> stem = input_block(tape, image, input_);
  TensorT<T> x = stem;
  std::array<TensorT<T>, 4> skips;
  for (int s = 0; s < 4; ++s) {
    EncoderStageOut<T> out =
        encoder_stage(tape, x, encoder_[static_cast<std::size_t>(s)]);
    skips[static_cast<std::size_t>(s)] = out.skip;
    x = out.features;
  }
  for (int d = 0; d < 4; ++d) {
    const std::size_t si = static_cast<std::size_t>(3 - d);
    TensorT<T> processed = cfg_.use_dmr
                               ? dmr_block(tape, skips[si], dmr_[si])
                               : skips[si];
    x = decoder_stage(tape, x, processed,
                      decoder_[static_cast<std::size_t>(d)]);
  }
  TensorT<T> head = cfg_.use_dmr ? dmr_block(tape, stem, dmr_[4]) : stem;
  TensorT<T> fused = concat_channels(tape, x, head);
  return output_block(tape, fused, output_);
}

template <class T>
std::vector<ParamRefT<T>> ModelT<T>::state_entries() {
  std::vector<ParamRefT<T>> out;
  collect_params(input_, "stem", out);
  for (int s = 0; s < 4; ++s) {
    collect_params(encoder_[static_cast<std::size_t>(s)],
                   "enc" + std::to_string(s + 1), out);
  }
  if (cfg_.use_dmr) {
    for (int i = 0; i < 5; ++i) {
      collect_params(dmr_[static_cast<std::size_t>(i)],
                     "dmr" + std::to_string(i + 1), out);
    }
  }
  for (int d = 0; d < 4; ++d) {
    collect_params(decoder_[static_cast<std::size_t>(d)],
                   "dec" + std::to_string(d + 1), out);
  }
  collect_params(output_, "out", out);
  return out;
}

template <class T>
std::vector<ParamRefT<T>> ModelT<T>::parameters() {
  std::vector<ParamRefT<T>> all = state_entries();
  std::vector<ParamRefT<T>> trainable;
  trainable.reserve(all.size());
  for (ParamRefT<T>& p : all) {
    if (p.kind == ParamKind::kTrainable) trainable.push_back(p);
  }
  return trainable;
}

template <class T>
long long ModelT<T>::param_count() {
  long long total = 0;
  for (const ParamRefT<T>& p : parameters()) {
    total += static_cast<long long>(p.tensor->numel());
  }
  return total;
}

template <class T>
std::vector<std::pair<std::string, long long>> ModelT<T>::param_breakdown() {
  std::vector<std::pair<std::string, long long>> out;
  for (const ParamRefT<T>& p : parameters()) {
    const std::string top = p.name.substr(0, p.name.find('.'));
    if (out.empty() || out.back().first != top) out.push_back({top, 0});
    out.back().second += static_cast<long long>(p.tensor->numel());
  }
  return out;
}

template <class T>
long long ModelT<T>::layer_count() const {
  // Elementary ops in one forward pass: conv, bn, relu, pool, upsample,
  // softmax. Concatenation and addition are wiring, not layers.
  const long long es = 4;                       // relu, dw conv, squeeze, bn
  const long long group = 3 * es + 1;           // fuse conv
  const long long enc_stage = cfg_.repeat * group + 1;   // pool
  const long long dec_stage = cfg_.repeat * group + 2;   // upsample + merge
  const long long dmr = 6 + 5 + 3;              // convs, bns, relus
  long long total = 3;                          // input block
  total += 4 * enc_stage + 4 * dec_stage;
  if (cfg_.use_dmr) total += 5 * dmr;
  total += 3;                                   // output block
  return total;
}

// --- checkpoint serialization ---
//
// Layout (all integers little-endian):
//   magic "ESDM" | u32 version | u32 digest length | digest bytes |
//   u32 tensor count | per tensor: u32 name length | name bytes |
//   u32 rank | u32 dims... | raw 32-bit LE floats.

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof(bits));
  put_u32(out, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  std::string context = "header";

  bool need(std::size_t n) const { return pos + n <= buf.size(); }

  void fail() const {
    throw std::runtime_error("checkpoint: truncated file while reading " +
                             context);
  }

  std::uint32_t u32() {
    if (!need(4)) fail();
    const unsigned char* p =
        reinterpret_cast<const unsigned char*>(buf.data()) + pos;
    pos += 4;
    return static_cast<std::uint32_t>(p[0]) |
           (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
  }

  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    return f;
  }

  std::string bytes(std::size_t n) {
    if (!need(n)) fail();
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

template <class T>
void ModelT<T>::save(const std::string& path) {
  std::string out;
  out += "ESDM";
  put_u32(out, kCheckpointVersion);
  const std::string digest = config_digest(cfg_);
  put_u32(out, static_cast<std::uint32_t>(digest.size()));
  out += digest;

  std::vector<ParamRefT<T>> entries = state_entries();
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const ParamRefT<T>& e : entries) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    const std::vector<int>& shape = e.tensor->shape();
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) put_u32(out, static_cast<std::uint32_t>(d));
    const T* data = e.tensor->data();
    for (std::size_t i = 0; i < e.tensor->numel(); ++i) {
      put_f32(out, static_cast<float>(data[i]));
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("checkpoint: write failed: " + path);
}

template <class T>
ModelT<T> ModelT<T>::load(const std::string& path, const ModelConfig& cfg) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string buf = ss.str();

  Reader r{buf};
  if (r.bytes(4) != "ESDM") {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  r.context = "version";
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  }
  r.context = "config digest";
  const std::uint32_t digest_len = r.u32();
  if (digest_len > 1 << 16) {
    throw std::runtime_error("checkpoint: corrupt digest length");
  }
  r.bytes(digest_len);  // informational; structural checks below are authoritative
  r.context = "tensor count";
  const std::uint32_t count = r.u32();

  struct Stored {
    std::vector<int> shape;
    std::vector<float> data;
  };
  std::map<std::string, Stored> stored;
  std::string last_name = "<none>";
  for (std::uint32_t i = 0; i < count; ++i) {
    r.context = "tensor #" + std::to_string(i) + " (after '" + last_name + "')";
    const std::uint32_t name_len = r.u32();
    if (name_len == 0 || name_len > 4096) {
      throw std::runtime_error("checkpoint: corrupt name length for " +
                               r.context);
    }
    const std::string name = r.bytes(name_len);
    r.context = "tensor '" + name + "'";
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) {
      throw std::runtime_error("checkpoint: corrupt rank for tensor '" + name +
                               "'");
    }
    Stored s;
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t e = r.u32();
      if (e == 0 || e > (1u << 28)) {
        throw std::runtime_error("checkpoint: corrupt extent for tensor '" +
                                 name + "'");
      }
      s.shape.push_back(static_cast<int>(e));
      numel *= e;
    }
    if (!r.need(numel * 4)) {
      throw std::runtime_error(
          "checkpoint: truncated file while reading tensor '" + name + "'");
    }
    s.data.resize(numel);
    for (std::size_t k = 0; k < numel; ++k) s.data[k] = r.f32();
    if (stored.count(name)) {
      throw std::runtime_error("checkpoint: duplicate tensor '" + name + "'");
    }
    stored.emplace(name, std::move(s));
    last_name = name;
  }

  ModelT<T> m = build(cfg);
  std::vector<std::string> missing;
  for (ParamRefT<T>& e : m.state_entries()) {
    auto it = stored.find(e.name);
    if (it == stored.end()) {
      missing.push_back(e.name);
      continue;
    }
    if (it->second.shape != e.tensor->shape()) {
      throw std::runtime_error(
          "checkpoint: shape mismatch for tensor '" + e.name + "': file has " +
          shape_to_string(it->second.shape) + ", model needs " +
          shape_to_string(e.tensor->shape()));
    }
    T* dst = e.tensor->data();
    for (std::size_t k = 0; k < it->second.data.size(); ++k) {
      dst[k] = static_cast<T>(it->second.data[k]);
    }
    stored.erase(it);
  }
  if (!missing.empty()) {
    std::string msg = "checkpoint: missing tensors:";
    for (const std::string& n : missing) msg += " '" + n + "'";
    throw std::runtime_error(msg);
  }
  if (!stored.empty()) {
    std::string msg = "checkpoint: unexpected tensors for this config:";
    for (const auto& kv : stored) msg += " '" + kv.first + "'";
    throw std::runtime_error(msg);
  }
  return m;
}

template class ModelT<float>;
template class ModelT<double>;

}  // namespace esdmr
