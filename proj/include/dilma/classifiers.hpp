#pragma once

#include "dilma/autodiff.hpp"
#include "dilma/checkpoint.hpp"
#include "dilma/common.hpp"
#include "dilma/data.hpp"
#include "dilma/nn.hpp"
#include "dilma/rng.hpp"
#include "dilma/sampler.hpp"

#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace dilma {

inline void require_multiclass(const std::vector<LabeledExample>& data) {
  std::set<int> labels;
  for (const auto& ex : data) labels.insert(ex.label);
  if (labels.size() < 2) {
    throw std::runtime_error("training data must contain at least 2 classes");
  }
}

// Shared epoch loop: per-example cross entropy, gradient accumulation over
// batches, Adam. make_loss builds the scalar loss graph for one example.
template <typename MakeLoss>
std::vector<double> run_training(const std::vector<ad::Var>& params, size_t n_examples, int epochs,
                                 int batch, double lr, uint64_t seed, MakeLoss&& make_loss) {
  Rng rng(seed);
  nn::Adam opt(params, lr);
  std::vector<size_t> order(n_examples);
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> epoch_losses;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    size_t in_batch = 0;
    opt.zero_grad();
    for (size_t oi = 0; oi < order.size(); ++oi) {
      ad::Var loss = make_loss(order[oi], rng);
      loss_sum += loss->value(0, 0);
      size_t batch_start = oi - in_batch;
      size_t batch_n = std::min<size_t>(static_cast<size_t>(batch), order.size() - batch_start);
      ad::backward(ad::smul(loss, 1.0 / static_cast<double>(batch_n)));
      if (++in_batch == batch_n) {
        opt.step();
        opt.zero_grad();
        in_batch = 0;
      }
    }
    epoch_losses.push_back(loss_sum / static_cast<double>(n_examples));
  }
  return epoch_losses;
}

struct TargetConfig {
  int layers = 2;
  int width = 128;
  int heads = 4;
  int ffn = 256;
  int max_len = 64;
  int epochs = 6;
  int batch = 16;
  double lr = 1e-3;
};

// Small transformer-encoder classifier; stands in for the large pretrained
// target. The attack treats it as a black box: hard token ids in, class
// probabilities out.
class TransformerClassifier {
 public:
  TransformerClassifier(int vocab_size, int num_classes, const TargetConfig& cfg, uint64_t seed)
      : vocab_size_(vocab_size), num_classes_(num_classes), cfg_(cfg) {
    Rng rng(seed);
    tok_emb_ = ad::leaf(nn::gaussian(vocab_size, cfg.width, 0.1, rng));
    pos_emb_ = ad::leaf(nn::gaussian(cfg.max_len, cfg.width, 0.1, rng));
    for (int l = 0; l < cfg.layers; ++l) {
      layers_.push_back(nn::EncoderLayer::init(cfg.width, cfg.heads, cfg.ffn, rng));
    }
    head_ = nn::Linear::init(cfg.width, num_classes, rng);
    build_groups();
  }

  int num_classes() const { return num_classes_; }
  int vocab_size() const { return vocab_size_; }
  const TargetConfig& config() const { return cfg_; }
  const std::vector<nn::ParamGroup>& groups() const { return groups_; }

  ad::Var logits_from_embedded(const ad::Var& x) const {
    ad::Var h = ad::add(x, ad::top_rows(pos_emb_, x->rows()));
    for (const auto& layer : layers_) h = layer(h);
    return head_(ad::mean_rows(h));
  }

  ad::Var logits_hard(const TokenSequence& x) const {
    check_len(x.size());
    return logits_from_embedded(ad::gather_rows(tok_emb_, x.ids));
  }

  Vec predict_proba(const TokenSequence& x) const {
    return ad::softmax_rows_value(logits_hard(x)->value).row(0).transpose();
  }

  Vec predict_proba(const RelaxedSequence& r) const {
    check_relaxed(r.rows);
    ad::Var x = ad::matmul(ad::constant(r.rows), tok_emb_);
    return ad::softmax_rows_value(logits_from_embedded(x)->value).row(0).transpose();
  }

  int predict(const TokenSequence& x) const {
    Vec p = predict_proba(x);
    Eigen::Index c;
    p.maxCoeff(&c);
    return static_cast<int>(c);
  }

  std::vector<double> train(const std::vector<LabeledExample>& data, uint64_t seed) {
    require_multiclass(data);
    return run_training(nn::flatten(groups_), data.size(), cfg_.epochs, cfg_.batch, cfg_.lr, seed,
                        [&](size_t i, Rng&) {
                          return ad::cross_entropy_rows(logits_hard(data[i].sequence),
                                                        {data[i].label});
                        });
  }

  uint64_t params_fingerprint() const { return nn::params_hash(groups_); }

  void save(const std::filesystem::path& path, uint64_t vocab_hash, uint64_t seed) const {
    std::map<std::string, std::string> meta{
        {"layers", std::to_string(cfg_.layers)},   {"width", std::to_string(cfg_.width)},
        {"heads", std::to_string(cfg_.heads)},     {"ffn", std::to_string(cfg_.ffn)},
        {"max_len", std::to_string(cfg_.max_len)}, {"vocab_size", std::to_string(vocab_size_)},
        {"num_classes", std::to_string(num_classes_)},
    };
    save_checkpoint(path, "target", meta, groups_, vocab_hash, seed);
  }

  static TransformerClassifier load(const std::filesystem::path& path,
                                    uint64_t* vocab_hash = nullptr) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.kind != "target") throw std::runtime_error(cat("expected target checkpoint, got ", ck.kind));
    TargetConfig cfg;
    cfg.layers = ck.meta_int("layers");
    cfg.width = ck.meta_int("width");
    cfg.heads = ck.meta_int("heads");
    cfg.ffn = ck.meta_int("ffn");
    cfg.max_len = ck.meta_int("max_len");
    TransformerClassifier c(ck.meta_int("vocab_size"), ck.meta_int("num_classes"), cfg, 0);
    restore_groups(c.groups_, ck);
    if (vocab_hash) *vocab_hash = ck.vocab_hash;
    return c;
  }

 private:
  void check_len(size_t t) const {
    if (t < 1) throw std::invalid_argument("classifier: empty sequence");
    if (static_cast<int>(t) > cfg_.max_len) {
      throw std::invalid_argument(cat("classifier: sequence length ", t, " exceeds max ", cfg_.max_len));
    }
  }
  void check_relaxed(const Mat& rows) const {
    check_len(static_cast<size_t>(rows.rows()));
    if (rows.cols() != vocab_size_) {
      throw std::invalid_argument(cat("relaxed input has ", rows.cols(), " columns, vocabulary needs ",
                                      vocab_size_));
    }
  }
  void build_groups() {
    groups_.clear();
    nn::ParamGroup emb{"embeddings", {}};
    emb.params.push_back({"token_embedding", tok_emb_});
    emb.params.push_back({"position_embedding", pos_emb_});
    groups_.push_back(std::move(emb));
    for (size_t l = 0; l < layers_.size(); ++l) {
      bool final_layer = (l + 1 == layers_.size());
      nn::ParamGroup g{final_layer ? "final_encoder_layer" : cat("encoder_layer_", l), {}};
      layers_[l].collect(g, cat("layer_", l));
      groups_.push_back(std::move(g));
    }
    nn::ParamGroup head{"head", {}};
    head_.collect(head, "head");
    groups_.push_back(std::move(head));
  }

  int vocab_size_, num_classes_;
  TargetConfig cfg_;
  ad::Var tok_emb_, pos_emb_;
  std::vector<nn::EncoderLayer> layers_;
  nn::Linear head_;
  std::vector<nn::ParamGroup> groups_;
};

struct SubstituteConfig {
  int embed = 64;
  int hidden = 150;
  double dropout = 0.3;
  int epochs = 8;
  int batch = 16;
  double lr = 2e-3;
};

// Recurrent substitute classifier: embedding, single LSTM layer, mean-pooled
// states, linear head. Accepts hard ids or relaxed row-stochastic input; the
// relaxed path is differentiable with respect to the rows.
class LstmClassifier {
 public:
  LstmClassifier(int vocab_size, int num_classes, const SubstituteConfig& cfg, uint64_t seed)
      : vocab_size_(vocab_size), num_classes_(num_classes), cfg_(cfg) {
    Rng rng(seed);
    emb_ = ad::leaf(nn::gaussian(vocab_size, cfg.embed, 0.1, rng));
    lstm_ = nn::Lstm::init(cfg.embed, cfg.hidden, rng);
    head_ = nn::Linear::init(cfg.hidden, num_classes, rng);
    build_groups();
  }

  int num_classes() const { return num_classes_; }
  int vocab_size() const { return vocab_size_; }
  const SubstituteConfig& config() const { return cfg_; }
  const std::vector<nn::ParamGroup>& groups() const { return groups_; }

  // Differentiable path: rows is a t x d var of relaxed one-hot rows.
  ad::Var probs_relaxed(const ad::Var& rows) const {
    if (rows->cols() != vocab_size_) {
      throw std::invalid_argument(cat("relaxed input has ", rows->cols(),
                                      " columns, vocabulary needs ", vocab_size_));
    }
    return ad::softmax_rows(head_(lstm_.mean_hidden(ad::matmul(rows, emb_))));
  }

  ad::Var probs_hard(const TokenSequence& x) const {
    if (x.empty()) throw std::invalid_argument("classifier: empty sequence");
    return ad::softmax_rows(head_(lstm_.mean_hidden(ad::gather_rows(emb_, x.ids))));
  }

  Vec predict_proba(const TokenSequence& x) const { return probs_hard(x)->value.row(0).transpose(); }

  Vec predict_proba(const RelaxedSequence& r) const {
    return probs_relaxed(ad::constant(r.rows))->value.row(0).transpose();
  }

  int predict(const TokenSequence& x) const {
    Vec p = predict_proba(x);
    Eigen::Index c;
    p.maxCoeff(&c);
    return static_cast<int>(c);
  }

  std::vector<double> train(const std::vector<LabeledExample>& data, uint64_t seed) {
    require_multiclass(data);
    return run_training(
        nn::flatten(groups_), data.size(), cfg_.epochs, cfg_.batch, cfg_.lr, seed,
        [&](size_t i, Rng& rng) {
          ad::Var pooled = lstm_.mean_hidden(ad::gather_rows(emb_, data[i].sequence.ids));
          pooled = nn::dropout(pooled, cfg_.dropout, rng);
          return ad::cross_entropy_rows(head_(pooled), {data[i].label});
        });
  }

  uint64_t params_fingerprint() const { return nn::params_hash(groups_); }

  void save(const std::filesystem::path& path, uint64_t vocab_hash, uint64_t seed) const {
    std::map<std::string, std::string> meta{
        {"embed", std::to_string(cfg_.embed)},
        {"hidden", std::to_string(cfg_.hidden)},
        {"dropout", format_double(cfg_.dropout)},
        {"vocab_size", std::to_string(vocab_size_)},
        {"num_classes", std::to_string(num_classes_)},
    };
    save_checkpoint(path, "substitute", meta, groups_, vocab_hash, seed);
  }

  static LstmClassifier load(const std::filesystem::path& path, uint64_t* vocab_hash = nullptr) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.kind != "substitute") {
      throw std::runtime_error(cat("expected substitute checkpoint, got ", ck.kind));
    }
    SubstituteConfig cfg;
    cfg.embed = ck.meta_int("embed");
    cfg.hidden = ck.meta_int("hidden");
    cfg.dropout = ck.meta_double("dropout");
    LstmClassifier c(ck.meta_int("vocab_size"), ck.meta_int("num_classes"), cfg, 0);
    restore_groups(c.groups_, ck);
    if (vocab_hash) *vocab_hash = ck.vocab_hash;
    return c;
  }

 private:
  void build_groups() {
    groups_.clear();
    nn::ParamGroup emb{"embedding", {}};
    emb.params.push_back({"token_embedding", emb_});
    groups_.push_back(std::move(emb));
    nn::ParamGroup rec{"lstm", {}};
    lstm_.collect(rec, "lstm");
    groups_.push_back(std::move(rec));
    nn::ParamGroup head{"head", {}};
    head_.collect(head, "head");
    groups_.push_back(std::move(head));
  }

  int vocab_size_, num_classes_;
  SubstituteConfig cfg_;
  ad::Var emb_;
  nn::Lstm lstm_;
  nn::Linear head_;
  std::vector<nn::ParamGroup> groups_;
};

// Trains the black-box target on the target half of the data.
inline TransformerClassifier train_target(const std::vector<LabeledExample>& target_half,
                                          int vocab_size, int num_classes, const TargetConfig& cfg,
                                          uint64_t seed) {
  TransformerClassifier clf(vocab_size, num_classes, cfg, seed);
  clf.train(target_half, Rng::mix(seed, 1));
  return clf;
}

// Trains the substitute strictly on the substitute half of the split.
inline LstmClassifier train_substitute(const DatasetSplit& split, int vocab_size, int num_classes,
                                       const SubstituteConfig& cfg, uint64_t seed) {
  LstmClassifier clf(vocab_size, num_classes, cfg, seed);
  clf.train(split.substitute_half, Rng::mix(seed, 1));
  return clf;
}

}  // namespace dilma
