#include "patchseg/classifier.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "patchseg/error.hpp"
#include "patchseg/io_util.hpp"
#include "patchseg/log.hpp"

namespace patchseg {

// ---------------------------------------------------------------------------
// Architecture descriptors

std::vector<LayerSpec> parse_architecture(std::string_view text) {
  std::vector<LayerSpec> out;
  std::string buffer(text);
  for (char& c : buffer) {
    if (c == ',') c = ' ';
  }
  std::istringstream in(buffer);
  std::string token;
  while (in >> token) {
    LayerSpec s;
    try {
      if (token == "relu") {
        s.kind = LayerKind::kRelu;
      } else if (token.rfind("pool", 0) == 0) {
        s.kind = LayerKind::kPool;
        s.kernel = static_cast<int>(io::parse_int(token.substr(4), "pool window"));
        s.stride = s.kernel;
      } else if (token.rfind("fc:", 0) == 0) {
        s.kind = LayerKind::kDense;
        s.width = static_cast<int>(io::parse_int(token.substr(3), "dense width"));
      } else if (token.rfind("conv", 0) == 0) {
        s.kind = LayerKind::kConv;
        const auto colon = token.find(':');
        if (colon == std::string::npos) throw FormatError("missing ':width'");
        std::string geometry = token.substr(4, colon - 4);
        const auto st = geometry.find('s');
        if (st != std::string::npos) {
          s.stride = static_cast<int>(io::parse_int(geometry.substr(st + 1), "conv stride"));
          geometry.resize(st);
        }
        s.kernel = static_cast<int>(io::parse_int(geometry, "conv kernel"));
        s.width = static_cast<int>(io::parse_int(token.substr(colon + 1), "conv width"));
      } else {
        throw FormatError("unknown layer");
      }
    } catch (const FormatError& e) {
      throw ConfigError("bad layer token '" + token + "': " + e.what());
    }
    if ((s.kind == LayerKind::kConv || s.kind == LayerKind::kPool) && (s.kernel < 1 || s.stride < 1)) {
      throw ConfigError("bad layer token '" + token + "': kernel and stride must be positive");
    }
    if ((s.kind == LayerKind::kConv || s.kind == LayerKind::kDense) && s.width < 1) {
      throw ConfigError("bad layer token '" + token + "': width must be positive");
    }
    out.push_back(s);
  }
  if (out.empty()) throw ConfigError("empty architecture");
  return out;
}

std::string to_string(const std::vector<LayerSpec>& layers) {
  std::string out;
  for (const LayerSpec& s : layers) {
    if (!out.empty()) out += ' ';
    switch (s.kind) {
      case LayerKind::kRelu:
        out += "relu";
        break;
      case LayerKind::kPool:
        out += "pool" + std::to_string(s.kernel);
        break;
      case LayerKind::kDense:
        out += "fc:" + std::to_string(s.width);
        break;
      case LayerKind::kConv:
        out += "conv" + std::to_string(s.kernel);
        if (s.stride != 1) out += "s" + std::to_string(s.stride);
        out += ":" + std::to_string(s.width);
        break;
    }
  }
  return out;
}

std::string reference_architecture(int labels) {
  return "conv3:16 relu pool2 conv3:32 relu pool2 conv3:64 relu pool2 fc:128 relu fc:" + std::to_string(labels);
}

std::string vgg16_architecture(int labels) {
  return "conv3:64 relu conv3:64 relu pool2 "
         "conv3:128 relu conv3:128 relu pool2 "
         "conv3:256 relu conv3:256 relu conv3:256 relu pool2 "
         "conv3:512 relu conv3:512 relu conv3:512 relu pool2 "
         "conv3:512 relu conv3:512 relu conv3:512 relu pool2 "
         "fc:4096 relu fc:4096 relu fc:" +
         std::to_string(labels);
}

// ---------------------------------------------------------------------------
// Config

void ClassifierConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (!(lr_end > 0.0) || !(lr_start > lr_end)) {
    throw ConfigError("learning rates must satisfy start > end > 0 (got start " + io::format_double(lr_start) +
                      ", end " + io::format_double(lr_end) + ")");
  }
  if (schedule == LrSchedule::kStep && (step_every < 1 || !(step_factor > 0.0) || step_factor >= 1.0)) {
    throw ConfigError("step schedule needs step_every >= 1 and 0 < step_factor < 1");
  }
  if (!(momentum >= 0.0) || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (per_label < 1) throw ConfigError("per_label must be at least 1");
  if (labels < 2) throw ConfigError("need at least two labels");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
  const auto layers = parse_architecture(architecture);
  if (layers.back().kind != LayerKind::kDense || layers.back().width != labels) {
    throw ConfigError("architecture must end in fc:" + std::to_string(labels));
  }
}

double ClassifierConfig::learning_rate(int epoch) const {
  if (schedule == LrSchedule::kStep) return std::max(lr_end, lr_start * std::pow(step_factor, epoch / step_every));
  if (epochs == 1 || epoch == 0) return lr_start;
  if (epoch == epochs - 1) return lr_end;
  const double t = static_cast<double>(epoch) / (epochs - 1);
  return std::exp(std::log(lr_start) + t * (std::log(lr_end) - std::log(lr_start)));
}

std::string ClassifierConfig::describe() const {
  std::ostringstream out;
  out << "train.architecture " << to_string(parse_architecture(architecture)) << '\n'
      << "train.epochs " << epochs << '\n'
      << "train.batch_size " << batch_size << '\n'
      << "train.lr_start " << io::format_double(lr_start) << '\n'
      << "train.lr_end " << io::format_double(lr_end) << '\n'
      << "train.schedule " << (schedule == LrSchedule::kStep ? "step" : "log-uniform") << '\n';
  if (schedule == LrSchedule::kStep) {
    out << "train.step_every " << step_every << '\n'
        << "train.step_factor " << io::format_double(step_factor) << '\n';
  }
  out << "train.momentum " << io::format_double(momentum) << '\n'
      << "train.per_label " << per_label << '\n'
      << "train.seed " << seed << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Layers

template <typename Scalar>
class Layer {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  virtual ~Layer() = default;
  virtual Shape output_shape() const = 0;
  virtual void forward(const Batch<Scalar>& x, Batch<Scalar>& y) const = 0;
  /// Accumulates parameter gradients; writes dx only when `dx` is non-null.
  virtual void backward(const Batch<Scalar>& x, const Batch<Scalar>& y, const Batch<Scalar>& dy,
                        Batch<Scalar>* dx) = 0;
  virtual std::vector<Param<Scalar>*> params() { return {}; }
};

namespace {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Uniform in [0, 1) from the top 53 bits, so float and double nets built
// with one seed draw the same numbers.
double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <typename Scalar>
void init_param(Param<Scalar>& p, int rows, int cols, double bound, std::mt19937_64& rng) {
  p.value.resize(rows, cols);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) p.value(r, c) = static_cast<Scalar>((2.0 * unit_draw(rng) - 1.0) * bound);
  }
  p.grad = Mat<Scalar>::Zero(rows, cols);
  p.velocity = Mat<Scalar>::Zero(rows, cols);
}

template <typename Scalar>
class Conv final : public Layer<Scalar> {
 public:
  Conv(Shape in, const LayerSpec& s, Init init, std::mt19937_64& rng)
      : in_(in), k_(s.kernel), stride_(s.stride), pad_(s.kernel / 2) {
    out_ = {s.width, (in.height + 2 * pad_ - k_) / stride_ + 1, (in.width + 2 * pad_ - k_) / stride_ + 1};
    if (out_.height < 1 || out_.width < 1) throw ConfigError("convolution leaves no output pixels");
    const int fan_in = in.channels * k_ * k_;
    const double bound = init == Init::kZero ? 0.0 : std::sqrt(6.0 / fan_in);
    init_param(weight_, fan_in, s.width, bound, rng);
    init_param(bias_, 1, s.width, 0.0, rng);
  }

  Shape output_shape() const override { return out_; }

  void forward(const Batch<Scalar>& x, Batch<Scalar>& y) const override {
    y.resize(x.rows(), out_.size());
    Mat<Scalar> cols;
    for (Eigen::Index n = 0; n < x.rows(); ++n) {
      im2col(x.row(n).data(), cols);
      Eigen::Map<Mat<Scalar>> out(y.row(n).data(), out_.height * out_.width, out_.channels);
      out.noalias() = cols * weight_.value;
      out.rowwise() += bias_.value.row(0);
    }
  }

  void backward(const Batch<Scalar>& x, const Batch<Scalar>&, const Batch<Scalar>& dy,
                Batch<Scalar>* dx) override {
    Mat<Scalar> cols, dcols;
    if (dx) dx->setZero(x.rows(), in_.size());
    for (Eigen::Index n = 0; n < x.rows(); ++n) {
      im2col(x.row(n).data(), cols);
      Eigen::Map<const Mat<Scalar>> d(dy.row(n).data(), out_.height * out_.width, out_.channels);
      weight_.grad.noalias() += cols.transpose() * d;
      bias_.grad += d.colwise().sum();
      if (dx) {
        dcols.noalias() = d * weight_.value.transpose();
        col2im(dcols, dx->row(n).data());
      }
    }
  }

  std::vector<Param<Scalar>*> params() override { return {&weight_, &bias_}; }

 private:
  // Row per output pixel, column per (channel, ky, kx).
  void im2col(const Scalar* x, Mat<Scalar>& cols) const {
    const int pixels = out_.height * out_.width;
    cols.resize(pixels, in_.channels * k_ * k_);
    for (int c = 0; c < in_.channels; ++c) {
      const Scalar* plane = x + static_cast<std::ptrdiff_t>(c) * in_.height * in_.width;
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          Scalar* col = cols.col((c * k_ + ky) * k_ + kx).data();
          for (int oy = 0; oy < out_.height; ++oy) {
            const int iy = oy * stride_ + ky - pad_;
            for (int ox = 0; ox < out_.width; ++ox) {
              const int ix = ox * stride_ + kx - pad_;
              const bool inside = iy >= 0 && iy < in_.height && ix >= 0 && ix < in_.width;
              col[oy * out_.width + ox] = inside ? plane[iy * in_.width + ix] : Scalar(0);
            }
          }
        }
      }
    }
  }

  void col2im(const Mat<Scalar>& cols, Scalar* dx) const {
    for (int c = 0; c < in_.channels; ++c) {
      Scalar* plane = dx + static_cast<std::ptrdiff_t>(c) * in_.height * in_.width;
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          const Scalar* col = cols.col((c * k_ + ky) * k_ + kx).data();
          for (int oy = 0; oy < out_.height; ++oy) {
            const int iy = oy * stride_ + ky - pad_;
            if (iy < 0 || iy >= in_.height) continue;
            for (int ox = 0; ox < out_.width; ++ox) {
              const int ix = ox * stride_ + kx - pad_;
              if (ix >= 0 && ix < in_.width) plane[iy * in_.width + ix] += col[oy * out_.width + ox];
            }
          }
        }
      }
    }
  }

  Shape in_, out_;
  int k_, stride_, pad_;
  Param<Scalar> weight_, bias_;
};

template <typename Scalar>
class MaxPool final : public Layer<Scalar> {
 public:
  MaxPool(Shape in, const LayerSpec& s) : in_(in), k_(s.kernel), stride_(s.stride) {
    out_ = {in.channels, (in.height - k_) / stride_ + 1, (in.width - k_) / stride_ + 1};
    if (in.height < k_ || in.width < k_) throw ConfigError("pooling window larger than its input");
  }

  Shape output_shape() const override { return out_; }

  void forward(const Batch<Scalar>& x, Batch<Scalar>& y) const override {
    y.resize(x.rows(), out_.size());
    for (Eigen::Index n = 0; n < x.rows(); ++n) {
      for (int o = 0; o < out_.size(); ++o) y(n, o) = x(n, argmax(x.row(n).data(), o));
    }
  }

  void backward(const Batch<Scalar>& x, const Batch<Scalar>&, const Batch<Scalar>& dy,
                Batch<Scalar>* dx) override {
    if (!dx) return;
    dx->setZero(x.rows(), in_.size());
    for (Eigen::Index n = 0; n < x.rows(); ++n) {
      for (int o = 0; o < out_.size(); ++o) (*dx)(n, argmax(x.row(n).data(), o)) += dy(n, o);
    }
  }

 private:
  // Input index of the first maximum in the window of output `o`.
  int argmax(const Scalar* x, int o) const {
    const int c = o / (out_.height * out_.width);
    const int oy = (o / out_.width) % out_.height;
    const int ox = o % out_.width;
    int best = -1;
    for (int dy = 0; dy < k_; ++dy) {
      for (int dxi = 0; dxi < k_; ++dxi) {
        const int i = (c * in_.height + oy * stride_ + dy) * in_.width + ox * stride_ + dxi;
        if (best < 0 || x[i] > x[best]) best = i;
      }
    }
    return best;
  }

  Shape in_, out_;
  int k_, stride_;
};

template <typename Scalar>
class Relu final : public Layer<Scalar> {
 public:
  explicit Relu(Shape in) : shape_(in) {}
  Shape output_shape() const override { return shape_; }
  void forward(const Batch<Scalar>& x, Batch<Scalar>& y) const override { y = x.cwiseMax(Scalar(0)); }
  void backward(const Batch<Scalar>& x, const Batch<Scalar>&, const Batch<Scalar>& dy,
                Batch<Scalar>* dx) override {
    if (dx) *dx = (x.array() > Scalar(0)).select(dy, Scalar(0));
  }

 private:
  Shape shape_;
};

template <typename Scalar>
class Dense final : public Layer<Scalar> {
 public:
  Dense(Shape in, const LayerSpec& s, Init init, std::mt19937_64& rng) : out_{s.width, 1, 1} {
    const int fan_in = in.size();
    const double bound = init == Init::kZero ? 0.0 : std::sqrt(6.0 / fan_in);
    init_param(weight_, fan_in, s.width, bound, rng);
    init_param(bias_, 1, s.width, 0.0, rng);
  }

  Shape output_shape() const override { return out_; }

  void forward(const Batch<Scalar>& x, Batch<Scalar>& y) const override {
    y.noalias() = x * weight_.value;
    y.rowwise() += bias_.value.row(0);
  }

  void backward(const Batch<Scalar>& x, const Batch<Scalar>&, const Batch<Scalar>& dy,
                Batch<Scalar>* dx) override {
    weight_.grad.noalias() += x.transpose() * dy;
    bias_.grad += dy.colwise().sum();
    if (dx) dx->noalias() = dy * weight_.value.transpose();
  }

  std::vector<Param<Scalar>*> params() override { return {&weight_, &bias_}; }

 private:
  Shape out_;
  Param<Scalar> weight_, bias_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Network

template <typename Scalar>
Network<Scalar>::Network(const std::vector<LayerSpec>& layers, Shape input, Init init, uint64_t seed)
    : specs_(layers), input_(input) {
  if (input.size() <= 0) throw ConfigError("network input shape is empty");
  std::mt19937_64 rng(seed);
  Shape shape = input;
  for (const LayerSpec& s : layers) {
    switch (s.kind) {
      case LayerKind::kConv:
        layers_.push_back(std::make_unique<Conv<Scalar>>(shape, s, init, rng));
        break;
      case LayerKind::kPool:
        layers_.push_back(std::make_unique<MaxPool<Scalar>>(shape, s));
        break;
      case LayerKind::kRelu:
        layers_.push_back(std::make_unique<Relu<Scalar>>(shape));
        break;
      case LayerKind::kDense:
        layers_.push_back(std::make_unique<Dense<Scalar>>(shape, s, init, rng));
        break;
    }
    shape = layers_.back()->output_shape();
  }
  output_ = shape;
}

template <typename Scalar>
Network<Scalar>::~Network() = default;
template <typename Scalar>
Network<Scalar>::Network(Network&&) noexcept = default;
template <typename Scalar>
Network<Scalar>& Network<Scalar>::operator=(Network&&) noexcept = default;

template <typename Scalar>
std::vector<Param<Scalar>*> Network<Scalar>::params() {
  std::vector<Param<Scalar>*> out;
  for (auto& l : layers_) {
    for (Param<Scalar>* p : l->params()) out.push_back(p);
  }
  return out;
}

template <typename Scalar>
std::vector<const Param<Scalar>*> Network<Scalar>::params() const {
  std::vector<const Param<Scalar>*> out;
  for (auto& l : layers_) {
    for (Param<Scalar>* p : l->params()) out.push_back(p);
  }
  return out;
}

template <typename Scalar>
std::size_t Network<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : params()) n += p->value.size();
  return n;
}

template <typename Scalar>
Batch<Scalar> Network<Scalar>::logits(const Batch<Scalar>& input) const {
  if (input.cols() != input_.size()) {
    throw ConfigError("input has " + std::to_string(input.cols()) + " values per sample, network expects " +
                      std::to_string(input_.size()));
  }
  Batch<Scalar> a = input, b;
  for (const auto& l : layers_) {
    l->forward(a, b);
    std::swap(a, b);
  }
  return a;
}

template <typename Scalar>
Batch<Scalar> Network<Scalar>::predict(const Batch<Scalar>& input) const {
  return softmax<Scalar>(logits(input));
}

template <typename Scalar>
double Network<Scalar>::loss_and_gradient(const Batch<Scalar>& input, const std::vector<int>& labels,
                                          Batch<Scalar>* logits_out) {
  if (input.cols() != input_.size()) {
    throw ConfigError("input has " + std::to_string(input.cols()) + " values per sample, network expects " +
                      std::to_string(input_.size()));
  }
  if (static_cast<Eigen::Index>(labels.size()) != input.rows()) throw ConfigError("one label per sample required");
  const Eigen::Index n = input.rows();
  std::vector<Batch<Scalar>> acts(layers_.size() + 1);
  acts[0] = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->forward(acts[i], acts[i + 1]);
  const Batch<Scalar>& z = acts.back();
  if (logits_out) *logits_out = z;

  Batch<Scalar> d = softmax<Scalar>(z);
  double loss = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || y >= output_.size()) throw LookupError("label " + std::to_string(y) + " out of range");
    const double m = static_cast<double>(z.row(r).maxCoeff());
    double s = 0.0;
    for (Eigen::Index c = 0; c < z.cols(); ++c) s += std::exp(static_cast<double>(z(r, c)) - m);
    loss += m + std::log(s) - static_cast<double>(z(r, y));
    d(r, y) -= Scalar(1);
  }
  d /= static_cast<Scalar>(n);

  for (Param<Scalar>* p : params()) p->grad.setZero();
  Batch<Scalar> dx;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    layers_[i]->backward(acts[i], acts[i + 1], d, i > 0 ? &dx : nullptr);
    if (i > 0) std::swap(d, dx);
  }
  return loss / static_cast<double>(n);
}

template <typename Scalar>
void Network<Scalar>::sgd_step(double lr, double momentum) {
  for (Param<Scalar>* p : params()) {
    p->velocity = static_cast<Scalar>(momentum) * p->velocity + p->grad;
    p->value -= static_cast<Scalar>(lr) * p->velocity;
  }
}

template <typename Scalar>
Batch<Scalar> softmax(const Batch<Scalar>& logits) {
  Batch<Scalar> p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Scalar m = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

template class Network<float>;
template class Network<double>;
template Batch<float> softmax<float>(const Batch<float>&);
template Batch<double> softmax<double>(const Batch<double>&);

// ---------------------------------------------------------------------------
// Model file

namespace {
constexpr char kModelMagic[4] = {'P', 'G', 'M', 'D'};
constexpr uint32_t kModelVersion = 1;

void write_string(std::ostream& out, const std::string& s) {
  io::write_le<uint32_t>(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, std::string_view what) {
  const uint32_t n = io::read_le<uint32_t>(in, what);
  if (n > (1u << 20)) throw FormatError(std::string(what) + " is implausibly long");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw FormatError("truncated input while reading " + std::string(what));
  return s;
}
}  // namespace

uint64_t model_config_hash(const std::vector<LayerSpec>& layers, Shape input) {
  std::ostringstream s;
  s << to_string(layers) << '|' << input.channels << 'x' << input.height << 'x' << input.width;
  return io::fnv1a(s.str());
}

void save_model(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  const Shape in = model.net.input_shape();
  out.write(kModelMagic, 4);
  io::write_le<uint32_t>(out, kModelVersion);
  io::write_le<uint64_t>(out, model.config_hash);
  write_string(out, model.data_hash);
  write_string(out, to_string(model.net.layers()));
  io::write_le<uint32_t>(out, static_cast<uint32_t>(in.channels));
  io::write_le<uint32_t>(out, static_cast<uint32_t>(in.height));
  io::write_le<uint32_t>(out, static_cast<uint32_t>(in.width));
  const auto params = model.net.params();
  io::write_le<uint32_t>(out, static_cast<uint32_t>(params.size()));
  for (const Param<float>* p : params) {
    io::write_le<uint32_t>(out, static_cast<uint32_t>(p->value.rows()));
    io::write_le<uint32_t>(out, static_cast<uint32_t>(p->value.cols()));
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(float)));
  }
  if (!out) throw Error("write failed for " + path.string());
}

Model load_model(const std::filesystem::path& path, const ModelExpectations& expect) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open model " + path.string());
  uint64_t stored_hash = 0;
  std::string data_hash, arch;
  Shape shape;
  std::vector<Mat<float>> tensors;
  try {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kModelMagic, 4) != 0) throw FormatError("not a PGMD model");
    const uint32_t version = io::read_le<uint32_t>(in, "version");
    if (version != kModelVersion) throw FormatError("unsupported model version " + std::to_string(version));
    stored_hash = io::read_le<uint64_t>(in, "config hash");
    data_hash = read_string(in, "data hash");
    arch = read_string(in, "architecture");
    shape.channels = static_cast<int>(io::read_le<uint32_t>(in, "input channels"));
    shape.height = static_cast<int>(io::read_le<uint32_t>(in, "input height"));
    shape.width = static_cast<int>(io::read_le<uint32_t>(in, "input width"));
    const uint32_t count = io::read_le<uint32_t>(in, "tensor count");
    for (uint32_t t = 0; t < count; ++t) {
      const uint32_t rows = io::read_le<uint32_t>(in, "tensor rows");
      const uint32_t cols = io::read_le<uint32_t>(in, "tensor cols");
      if (static_cast<uint64_t>(rows) * cols > (1ull << 32)) throw FormatError("implausible tensor size");
      Mat<float> m(rows, cols);
      in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
      if (!in) throw FormatError("truncated tensor " + std::to_string(t));
      if (!m.allFinite()) throw FormatError("tensor " + std::to_string(t) + " has non-finite values");
      tensors.push_back(std::move(m));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after the last tensor");
  } catch (const FormatError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }

  const auto layers = parse_architecture(arch);
  if (model_config_hash(layers, shape) != stored_hash) {
    throw LoadError(path.string() + ": config hash does not match the stored architecture");
  }
  if (expect.channels >= 0 && expect.channels != shape.channels) {
    throw ConfigError("model expects " + std::to_string(shape.channels) + " input channels, data has " +
                      std::to_string(expect.channels));
  }
  if (expect.resolution >= 0 && (expect.resolution != shape.height || expect.resolution != shape.width)) {
    throw ConfigError("model expects " + std::to_string(shape.height) + "x" + std::to_string(shape.width) +
                      " grids, data has " + std::to_string(expect.resolution) + "x" +
                      std::to_string(expect.resolution));
  }
  if (!expect.data_hash.empty() && expect.data_hash != data_hash) {
    throw ConfigError("model was trained on pipeline config " + data_hash + ", data uses " + expect.data_hash);
  }

  Model model{Network<float>(layers, shape, Init::kZero), stored_hash, data_hash};
  auto params = model.net.params();
  if (params.size() != tensors.size()) throw LoadError(path.string() + ": tensor count does not match layers");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->value.rows() != tensors[i].rows() || params[i]->value.cols() != tensors[i].cols()) {
      throw LoadError(path.string() + ": tensor " + std::to_string(i) + " has the wrong shape");
    }
    params[i]->value = std::move(tensors[i]);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Training

std::string TrainReport::table() const {
  std::ostringstream out;
  out << "epoch  loss        accuracy  lr          seconds\n";
  char line[128];
  for (const EpochStats& e : epochs) {
    std::snprintf(line, sizeof line, "%-6d %-11.6f %-9.4f %-11.3e %.2f\n", e.epoch, e.loss, e.accuracy, e.lr,
                  e.seconds);
    out << line;
  }
  std::snprintf(line, sizeof line, "total seconds %.2f\n", seconds);
  out << line;
  return out.str();
}

TrainingData training_data(const Dataset& dataset) {
  TrainingData data;
  data.labels = dataset.labels();
  const auto& m = dataset.manifest();
  data.shape = {m.channels, m.resolution, m.resolution};
  data.fill = [&dataset](const std::vector<long>& ids, Batch<float>& out) {
    out.resize(static_cast<Eigen::Index>(ids.size()), dataset.record_size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const FeatureGrid g = dataset.read(ids[i]);
      out.row(static_cast<Eigen::Index>(i)) =
          Eigen::Map<const Eigen::RowVectorXf>(g.data.data(), static_cast<Eigen::Index>(g.data.size()));
    }
  };
  return data;
}

Model train(const TrainingData& data, const ClassifierConfig& config, TrainReport* report,
            const EpochCallback& on_epoch) {
  config.validate();
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  const auto layers = parse_architecture(config.architecture);
  Model model{Network<float>(layers, data.shape, Init::kFanIn, io::mix64(config.seed)),
              model_config_hash(layers, data.shape), ""};
  if (model.net.outputs() != config.labels) {
    throw ConfigError("network has " + std::to_string(model.net.outputs()) + " outputs for " +
                      std::to_string(config.labels) + " labels");
  }
  if (config.checkpoint_every > 0) std::filesystem::create_directories(config.checkpoint_dir);

  Batch<float> x, z;
  std::vector<long> batch_ids;
  std::vector<int> batch_labels;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    const double lr = config.learning_rate(epoch);
    const auto ids = balanced_epoch_sampler(data.labels, config.per_label, config.seed, epoch, config.labels);
    double loss_sum = 0.0;
    long correct = 0;
    int batch = 0;
    for (std::size_t first = 0; first < ids.size(); first += config.batch_size, ++batch) {
      const std::size_t last = std::min(ids.size(), first + config.batch_size);
      batch_ids.assign(ids.begin() + first, ids.begin() + last);
      batch_labels.clear();
      for (long id : batch_ids) batch_labels.push_back(data.labels[id]);
      data.fill(batch_ids, x);
      const double loss = model.net.loss_and_gradient(x, batch_labels, &z);
      if (!std::isfinite(loss)) {
        throw SolverError("non-finite loss in epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch));
      }
      loss_sum += loss * static_cast<double>(batch_ids.size());
      for (Eigen::Index r = 0; r < z.rows(); ++r) {
        Eigen::Index arg;
        z.row(r).maxCoeff(&arg);
        correct += arg == batch_labels[r];
      }
      model.net.sgd_step(lr, config.momentum);
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = loss_sum / static_cast<double>(ids.size());
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(ids.size());
    stats.lr = lr;
    stats.seconds = std::chrono::duration<double>(Clock::now() - epoch_start).count();
    if (report) report->epochs.push_back(stats);
    if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
      save_model(model, config.checkpoint_dir / ("epoch_" + std::to_string(epoch + 1) + ".pgmd"));
    }
    if (on_epoch && !on_epoch(stats)) break;
  }
  if (report) report->seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return model;
}

Batch<float> predict(const Model& model, const std::vector<const FeatureGrid*>& grids) {
  const int size = model.net.input_shape().size();
  Batch<float> out(static_cast<Eigen::Index>(grids.size()), model.net.outputs());
  constexpr std::size_t kChunk = 256;
  Batch<float> x;
  for (std::size_t first = 0; first < grids.size(); first += kChunk) {
    const std::size_t last = std::min(grids.size(), first + kChunk);
    x.resize(static_cast<Eigen::Index>(last - first), size);
    for (std::size_t i = first; i < last; ++i) {
      if (static_cast<int>(grids[i]->data.size()) != size) {
        throw ConfigError("grid of vertex " + std::to_string(grids[i]->vertex) + " has " +
                          std::to_string(grids[i]->data.size()) + " values, model expects " + std::to_string(size));
      }
      x.row(static_cast<Eigen::Index>(i - first)) =
          Eigen::Map<const Eigen::RowVectorXf>(grids[i]->data.data(), size);
    }
    out.middleRows(static_cast<Eigen::Index>(first), x.rows()) = model.net.predict(x);
  }
  return out;
}

}  // namespace patchseg
