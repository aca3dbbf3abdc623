#pragma once

// Grid-to-label convolutional classifier: layer stack parsed from a short
// text descriptor, SGD training with momentum over balanced epochs, and the
// PGMD model file.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "patchseg/features.hpp"

namespace patchseg {

enum class LayerKind { kConv, kPool, kRelu, kDense };

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  int kernel = 0;  // conv kernel or pool window
  int stride = 1;
  int width = 0;   // output channels (conv) or units (dense)
};

/// Whitespace or comma separated tokens: "conv3:16" (3x3, same padding),
/// "conv3s2:16" (stride 2), "pool2", "relu", "fc:128".
std::vector<LayerSpec> parse_architecture(std::string_view text);
std::string to_string(const std::vector<LayerSpec>& layers);

/// Three conv blocks (16/32/64, 3x3, 2x2 max-pool) and two dense layers.
std::string reference_architecture(int labels = kLabelCount);
/// VGG16 layer sequence; accepted by the parser but far too slow to train here.
std::string vgg16_architecture(int labels = kLabelCount);

enum class LrSchedule { kLogUniform, kStep };

struct ClassifierConfig {
  std::string architecture = reference_architecture();
  int epochs = 200;
  int batch_size = 64;
  double lr_start = 1e-3;
  double lr_end = 1e-9;
  LrSchedule schedule = LrSchedule::kLogUniform;
  int step_every = 50;        // kStep: epochs between drops
  double step_factor = 0.1;   // kStep: multiplier per drop
  double momentum = 0.9;
  int per_label = 5000;
  int labels = kLabelCount;
  int checkpoint_every = 0;   // 0 disables checkpoints
  std::filesystem::path checkpoint_dir;
  uint64_t seed = 0;

  /// Throws ConfigError on an unusable combination.
  void validate() const;
  double learning_rate(int epoch) const;
  std::string describe() const;
};

struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;
  int size() const { return channels * height * width; }
  bool operator==(const Shape&) const = default;
};

enum class Init { kFanIn, kZero };

/// One row per sample; a row holds a channel-major channels x height x width
/// tensor.
template <typename Scalar>
using Batch = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
struct Param {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> value;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> grad;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> velocity;
};

template <typename Scalar>
class Layer;

template <typename Scalar>
class Network {
 public:
  Network(const std::vector<LayerSpec>& layers, Shape input, Init init = Init::kFanIn, uint64_t seed = 0);
  ~Network();
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;

  Shape input_shape() const { return input_; }
  int outputs() const { return output_.size(); }
  const std::vector<LayerSpec>& layers() const { return specs_; }
  /// Every weight and bias, in layer order (weights before biases).
  std::vector<Param<Scalar>*> params();
  std::vector<const Param<Scalar>*> params() const;
  std::size_t parameter_count() const;

  /// Raw scores, one row per sample.
  Batch<Scalar> logits(const Batch<Scalar>& input) const;
  /// Softmax of the logits.
  Batch<Scalar> predict(const Batch<Scalar>& input) const;

  /// Mean cross-entropy of the batch; fills every Param::grad with its
  /// gradient (sum over samples divided by the batch size). The logits of the
  /// forward pass are copied to `logits_out` when given.
  double loss_and_gradient(const Batch<Scalar>& input, const std::vector<int>& labels,
                           Batch<Scalar>* logits_out = nullptr);

  /// value -= lr * (velocity = momentum * velocity + grad).
  void sgd_step(double lr, double momentum);

 private:
  std::vector<LayerSpec> specs_;
  Shape input_;
  Shape output_;
  std::vector<std::unique_ptr<Layer<Scalar>>> layers_;
};

extern template class Network<float>;
extern template class Network<double>;

/// Row-wise softmax, shifted by the row maximum.
template <typename Scalar>
Batch<Scalar> softmax(const Batch<Scalar>& logits);

/// Trained network plus the metadata checked on load.
struct Model {
  Network<float> net;
  uint64_t config_hash = 0;   // architecture, input shape and label count
  std::string data_hash;      // pipeline config hash of the training dataset
};

uint64_t model_config_hash(const std::vector<LayerSpec>& layers, Shape input);

void save_model(const Model& model, const std::filesystem::path& path);

struct ModelExpectations {
  int channels = -1;         // -1: do not check
  int resolution = -1;
  std::string data_hash;     // empty: do not check
};

/// Throws LoadError on a corrupt or truncated file and ConfigError when the
/// model does not fit the expectations.
Model load_model(const std::filesystem::path& path, const ModelExpectations& expect = {});

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double seconds = 0.0;
  std::string table() const;
};

/// Batch source for training: record ids to (features, labels).
struct TrainingData {
  std::vector<int> labels;  // per record
  Shape shape;
  std::function<void(const std::vector<long>& ids, Batch<float>& out)> fill;
};

TrainingData training_data(const Dataset& dataset);

/// Called after every epoch; returning false ends training early.
using EpochCallback = std::function<bool(const EpochStats&)>;

Model train(const TrainingData& data, const ClassifierConfig& config, TrainReport* report = nullptr,
            const EpochCallback& on_epoch = {});

/// Class probabilities for grids; rows follow the input order.
Batch<float> predict(const Model& model, const std::vector<const FeatureGrid*>& grids);

}  // namespace patchseg
