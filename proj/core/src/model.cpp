#include "debgcd/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "debgcd/errors.hpp"

namespace debgcd::model {

Config default_config() { return Config{}; }

MlpSpec adapter_spec(const ModelDims& dims, const Config& config) {
  const auto d = static_cast<Eigen::Index>(dims.dim);
  const Eigen::Index hidden = config.adapter_hidden > 0 ? config.adapter_hidden : d;
  return MlpSpec{{d, hidden, d}, compute::Activation::kGelu, compute::Activation::kNone};
}

MlpSpec rep_spec(const ModelDims& dims, const Config& config) {
  const auto d = static_cast<Eigen::Index>(dims.dim);
  const Eigen::Index h = config.proj_hidden;
  return MlpSpec{{d, h, h, config.rep_dim}, compute::Activation::kGelu, compute::Activation::kNone};
}

MlpSpec sdl_spec(const ModelDims& dims, const Config& config) {
  const auto d = static_cast<Eigen::Index>(dims.dim);
  const Eigen::Index h = config.proj_hidden;
  return MlpSpec{{d, h, h, h, h, config.sdl_dim}, compute::Activation::kGelu,
                 compute::Activation::kNone};
}

Model::Model(const ModelDims& dims, const Config& config, std::uint64_t seed)
    : dims_(dims),
      adapter_(model::adapter_spec(dims, config)),
      rep_(model::rep_spec(dims, config)),
      sdl_(model::sdl_spec(dims, config)) {
  if (dims.dim < 1) throw ConfigError("model: feature dimension must be positive");
  if (dims.num_classes < 2) throw ConfigError("model: need K >= 2 classes");
  if (dims.num_old < 1 || dims.num_old > dims.num_classes) {
    throw ConfigError("model: need 1 <= M <= K");
  }
  compute::Rng rng(seed);
  const auto d = static_cast<Eigen::Index>(dims.dim);
  const auto k = static_cast<Eigen::Index>(dims.num_classes);
  const auto m = static_cast<Eigen::Index>(dims.num_old);

  // Residual adapter starts as the identity map: the last layer is zero.
  compute::init_mlp(params_, kAdapter, adapter_, rng);
  params_.at(std::string(kAdapter) + ".fc2.weight").value.setZero();

  params_.add(kGcdPrototypes, compute::random_normal(rng, k, d, 1.0));
  compute::init_mlp(params_, kRepProjector, rep_, rng);
  compute::init_mlp(params_, kSdlProjector, sdl_, rng);
  params_.add(kOvaPositive, compute::random_normal(rng, m, config.sdl_dim, 1.0));
  params_.add(kOvaNegative, compute::random_normal(rng, m, config.sdl_dim, 1.0));
  params_.add(kAdlPrototypes, compute::random_normal(rng, k, d, 1.0));
}

Var Model::adapter(Tape& tape, Var raw) {
  if (raw.cols() != static_cast<Eigen::Index>(dims_.dim)) {
    throw DimensionError("model: expected " + std::to_string(dims_.dim) + "-dim features, got " +
                         std::to_string(raw.cols()));
  }
  return compute::add(raw, compute::mlp_forward(tape, params_, kAdapter, adapter_, raw));
}

Var Model::forward_backbone(Tape& tape, Var raw) {
  return compute::l2_normalize_rows(adapter(tape, raw));
}

Var Model::gcd_cosines(Tape& tape, Var h) {
  return compute::matmul_nt(h, compute::l2_normalize_rows(tape.param(params_.at(kGcdPrototypes))));
}

Var Model::adl_cosines(Tape& tape, Var h) {
  return compute::matmul_nt(h, compute::l2_normalize_rows(tape.param(params_.at(kAdlPrototypes))));
}

Var Model::rep_projection(Tape& tape, Var adapter_out) {
  return compute::l2_normalize_rows(
      compute::mlp_forward(tape, params_, kRepProjector, rep_, adapter_out));
}

Var Model::sdl_embedding(Tape& tape, Var adapter_out) {
  return compute::l2_normalize_rows(
      compute::mlp_forward(tape, params_, kSdlProjector, sdl_, adapter_out));
}

// ---- checkpoints ---------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'D', 'G', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw FormatError("DGCK: truncated checkpoint");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void magic() {
    need(4);
    if (std::memcmp(b_.data(), kMagic, 4) != 0) throw FormatError("DGCK: bad magic");
    pos_ += 4;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::string dims_text(const ModelDims& dims) {
  std::ostringstream os;
  os << "dim=" << dims.dim << "\nnum_classes=" << dims.num_classes << "\nnum_old=" << dims.num_old
     << '\n';
  return os.str();
}

// Splits the dimension lines off the config blob.
ModelDims take_dims(std::string& blob) {
  ModelDims dims;
  std::istringstream in(blob);
  std::string line;
  std::string rest;
  int found = 0;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    const std::string key = line.substr(0, eq);
    auto number = [&]() {
      try {
        return static_cast<std::size_t>(std::stoull(line.substr(eq + 1)));
      } catch (const std::exception&) {
        throw FormatError("DGCK: bad value for " + key);
      }
    };
    if (eq != std::string::npos && key == "dim") {
      dims.dim = number();
      ++found;
    } else if (eq != std::string::npos && key == "num_classes") {
      dims.num_classes = number();
      ++found;
    } else if (eq != std::string::npos && key == "num_old") {
      dims.num_old = number();
      ++found;
    } else {
      rest += line + '\n';
    }
  }
  if (found != 3) throw FormatError("DGCK: config blob lacks model dimensions");
  blob = rest;
  return dims;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model& model, const Config& config) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_string(out, config.to_text() + dims_text(model.dims()));
  put_u32(out, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& [name, p] : model.params()) {
    put_string(out, name);
    put_u32(out, static_cast<std::uint32_t>(p.value.rows()));
    put_u32(out, static_cast<std::uint32_t>(p.value.cols()));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) put_f64(out, p.value.data()[i]);
  }
  return out;
}

std::pair<Config, Model> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.magic();
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw FormatError("DGCK: unsupported version " + std::to_string(version));
  std::string blob = r.str();
  const ModelDims dims = take_dims(blob);
  Config config = parse_config(blob);
  Model model(dims, config, 0);

  const std::uint32_t count = r.u32();
  if (count != model.params().size()) throw FormatError("DGCK: parameter count mismatch");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    if (!model.params().contains(name)) throw FormatError("DGCK: unexpected parameter " + name);
    auto& p = model.params().at(name);
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows != p.value.rows() || cols != p.value.cols()) {
      throw FormatError("DGCK: shape mismatch for " + name);
    }
    for (Eigen::Index k = 0; k < p.value.size(); ++k) p.value.data()[k] = r.f64();
    if (!p.value.allFinite()) throw NumericError("DGCK: non-finite values in " + name);
  }
  if (!r.done()) throw FormatError("DGCK: trailing bytes");
  return {std::move(config), std::move(model)};
}

void save_checkpoint(const Model& model, const Config& config, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model, config);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::pair<Config, Model> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                  std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

}  // namespace debgcd::model
