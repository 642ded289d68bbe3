#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "coronagan/dataset.hpp"
#include "coronagan/losses.hpp"
#include "coronagan/networks.hpp"

namespace coronagan::train {

/// Every knob of a training run. Defaults are the desk-scale setup; the
/// full-size setup is 288x288 patches, base_width 64, batch 16.
struct TrainingConfig {
  int epochs = 50;
  int batch_size = 16;
  double lr_initial = 1e-4;
  int lr_decay_every = 2;
  loss::LossWeights weights;
  std::uint64_t seed = 0;
  int checkpoint_every = 10;
  std::filesystem::path out_dir = "run";

  // data
  int patch_size = 64;
  double flip_prob = 0.5;
  std::uint64_t shuffle_seed = 0;

  // networks
  net::NetworkConfig network{1, 3, 8, 5, 3, 8, 4, 3};

  // optimizer
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  loss::Downsample label_downsample = loss::Downsample::kNearest;
  int replay_buffer_size = 0;  // 0 disables the discriminator image pool

  void validate() const;
  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

/// Parses `key = value` lines ('#' starts a comment). Unknown keys are errors.
[[nodiscard]] TrainingConfig parse_config(const std::string& text);
[[nodiscard]] TrainingConfig load_config(const std::filesystem::path& file);
/// Inverse of parse_config; every key, one per line.
[[nodiscard]] std::string format_config(const TrainingConfig& config);

/// Stepwise-linear decay: lr_initial * (1 - floor(epoch / d) / ceil(epochs / d)).
[[nodiscard]] double lr_schedule(const TrainingConfig& config, int epoch);

template <std::floating_point T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(const nn::ParamStore<T>& params);

  void step(nn::ParamStore<T>& params, const nn::Grads<T>& grads, double lr, double beta1,
            double beta2, double eps);

  [[nodiscard]] std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  [[nodiscard]] std::vector<Tensor<T>>& first_moments() { return m_; }
  [[nodiscard]] std::vector<Tensor<T>>& second_moments() { return v_; }
  [[nodiscard]] const std::vector<Tensor<T>>& first_moments() const { return m_; }
  [[nodiscard]] const std::vector<Tensor<T>>& second_moments() const { return v_; }

 private:
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::int64_t t_ = 0;
};

template <std::floating_point T>
struct ModelGrads {
  explicit ModelGrads(const net::CoronaryGan<T>& model);
  void zero();

  nn::Grads<T> g_oh;
  nn::Grads<T> g_ho;
  nn::Grads<T> d_h;
  nn::Grads<T> d_o;
  nn::Grads<T> s_oh;
  nn::Grads<T> s_ho;
};

template <std::floating_point T>
struct GeneratorPass {
  loss::LossParts parts;
  double total = 0;
  Tensor<T> fake_h;
  Tensor<T> fake_o;
  Tensor<T> rec_o;
  Tensor<T> rec_h;
};

/// Forward pass of both generators, structure heads and (frozen)
/// discriminators on one batch. When `grads` is given, backpropagates the
/// weighted total into the generator and head gradients; discriminator
/// gradients are left untouched.
template <std::floating_point T>
GeneratorPass<T> generator_objective(const net::CoronaryGan<T>& model, const Tensor<T>& oct,
                                     const Tensor<T>& hist, const loss::LabelMap& labels_o,
                                     const loss::LabelMap& labels_h,
                                     const loss::LossWeights& weights, ModelGrads<T>* grads);

/// Least-squares discriminator losses on real images vs detached fakes;
/// accumulates into grads.d_h / grads.d_o when given. Returns {adv_d_H, adv_d_O}.
template <std::floating_point T>
std::pair<double, double> discriminator_objective(const net::CoronaryGan<T>& model,
                                                  const Tensor<T>& real_o, const Tensor<T>& real_h,
                                                  const Tensor<T>& fake_o, const Tensor<T>& fake_h,
                                                  ModelGrads<T>* grads);

/// FIFO-with-replacement history of generated images for discriminator updates.
class ImagePool {
 public:
  explicit ImagePool(int capacity = 0) : capacity_(capacity) {}
  /// Returns the batch to show the discriminator; may swap in stored images.
  Tensor<float> query(const Tensor<float>& images, Rng& rng);
  [[nodiscard]] int capacity() const { return capacity_; }
  [[nodiscard]] std::vector<Tensor<float>>& images() { return images_; }
  [[nodiscard]] const std::vector<Tensor<float>>& images() const { return images_; }

 private:
  int capacity_;
  std::vector<Tensor<float>> images_;
};

/// Everything needed to continue a run bit-exactly. The data order is a pure
/// function of (shuffle_seed, epoch, step), so `epoch` doubles as RNG state.
struct TrainerState {
  explicit TrainerState(const TrainingConfig& config);

  TrainingConfig config;
  net::CoronaryGan<float> model;
  std::vector<Adam<float>> optimizers;  // same order as model.networks()
  int epoch = 0;                        // epochs completed
  ImagePool pool_h;
  ImagePool pool_o;
};

/// Initializes a fresh state from config.seed.
[[nodiscard]] TrainerState initial_state(const TrainingConfig& config);

/// One alternating update on `batch`: generators and heads first (discriminators
/// frozen), then both discriminators on real vs detached fakes. Returns the
/// losses measured before either update. Throws NumericError naming the first
/// non-finite term.
loss::LossBreakdown train_step(TrainerState& state, const data::UnpairedBatch& batch, double lr,
                               int epoch, int step);

void save_checkpoint(const TrainerState& state, const std::filesystem::path& dir);
[[nodiscard]] TrainerState load_checkpoint(const std::filesystem::path& dir);

/// Newest `checkpoints/epoch_NNNN` under out_dir, or empty.
[[nodiscard]] std::filesystem::path latest_checkpoint(const std::filesystem::path& out_dir);

struct LossRecord {
  int epoch = 0;
  int step = 0;
  double lr = 0;
  loss::LossBreakdown losses;
};

inline constexpr const char* kLossCsvHeader =
    "epoch,step,lr,adv_g_OH,adv_g_HO,adv_d_H,adv_d_O,cycle,embedding,coronary,total_g";

[[nodiscard]] std::string format_loss_row(const LossRecord& record);
[[nodiscard]] std::vector<LossRecord> read_loss_csv(const std::filesystem::path& file);

struct TrainOptions {
  bool resume = false;
  std::ostream* log = nullptr;  // per-epoch progress lines
  std::function<void(const LossRecord&)> on_step;
};

/// Runs the remaining epochs of a run under config.out_dir: appends to
/// loss_log.csv, writes checkpoints every checkpoint_every epochs and at the
/// end, and returns the final checkpoint directory.
std::filesystem::path train(const TrainingConfig& config, const data::UnpairedLoader& loader,
                            const TrainOptions& options = {});
std::filesystem::path train(const TrainingConfig& config, const phantom::Manifest& manifest,
                            const TrainOptions& options = {});

}  // namespace coronagan::train
