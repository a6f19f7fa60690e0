#pragma once

#include "dilma/autodiff.hpp"
#include "dilma/checkpoint.hpp"
#include "dilma/common.hpp"
#include "dilma/nn.hpp"
#include "dilma/rng.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace dilma {

struct MlmConfig {
  int layers = 2;
  int width = 128;
  int heads = 4;
  int ffn = 256;
  int max_len = 64;
  double mask_prob = 0.15;
  int epochs = 3;
  int batch = 16;
  double lr = 1e-3;
};

// Transformer-encoder masked language model trained from scratch. Parameters
// are partitioned into named groups; the attack updates a configurable subset
// ("output_projection" and "final_encoder_layer" by default).
class MaskedLanguageModel {
 public:
  MaskedLanguageModel(int vocab_size, const MlmConfig& cfg, uint64_t init_seed)
      : vocab_size_(vocab_size), cfg_(cfg), init_seed_(init_seed) {
    Rng rng(init_seed);
    tok_emb_ = ad::leaf(nn::gaussian(vocab_size, cfg.width, 0.1, rng));
    pos_emb_ = ad::leaf(nn::gaussian(cfg.max_len, cfg.width, 0.1, rng));
    for (int l = 0; l < cfg.layers; ++l) {
      layers_.push_back(nn::EncoderLayer::init(cfg.width, cfg.heads, cfg.ffn, rng));
    }
    out_ = nn::Linear::init(cfg.width, vocab_size, rng);
    build_groups();
  }

  int vocab_size() const { return vocab_size_; }
  const MlmConfig& config() const { return cfg_; }
  uint64_t init_seed() const { return init_seed_; }

  const std::vector<nn::ParamGroup>& groups() const { return groups_; }
  std::vector<nn::ParamGroup>& groups() { return groups_; }

  // Parameter vars for a named subset of groups.
  std::vector<ad::Var> params_for(const std::vector<std::string>& group_names) const {
    std::vector<ad::Var> out;
    for (const auto& g : groups_) {
      for (const auto& name : group_names) {
        if (g.name == name) {
          for (const auto& p : g.params) out.push_back(p.var);
        }
      }
    }
    return out;
  }

  std::vector<ad::Var> all_params() const { return nn::flatten(groups_); }

  // Full-visibility forward pass: per-position logits over the vocabulary.
  ad::Var logits_var(const TokenSequence& x) const {
    long t = static_cast<long>(x.size());
    if (t < 1) throw std::invalid_argument("lm logits: empty sequence");
    if (t > cfg_.max_len) {
      throw std::invalid_argument(
          cat("lm logits: sequence length ", t, " exceeds max position count ", cfg_.max_len));
    }
    ad::Var h = ad::add(ad::gather_rows(tok_emb_, x.ids), ad::top_rows(pos_emb_, t));
    for (const auto& layer : layers_) h = layer(h);
    return out_(h);
  }

  Mat logits(const TokenSequence& x) const { return logits_var(x)->value; }

  // BERT-style masked-token pretraining. Of the selected positions 80% become
  // <mask>, 10% a random regular token, 10% stay intact; at least one position
  // is always selected. Returns the mean training loss per epoch.
  std::vector<double> pretrain(const std::vector<TokenSequence>& corpus, int mask_token_id,
                               uint64_t seed) {
    if (corpus.empty()) throw std::invalid_argument("pretrain: empty corpus");
    if (static_cast<int>(corpus.size()) < cfg_.batch) {
      throw std::invalid_argument(cat("pretrain: corpus of ", corpus.size(),
                                      " sequences is shorter than one batch of ", cfg_.batch));
    }
    Rng rng(seed);
    nn::Adam opt(all_params(), cfg_.lr);
    std::vector<double> epoch_losses;
    std::vector<size_t> order(corpus.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    const int first_regular = 3;  // ids below are <pad>/<unk>/<mask>
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      rng.shuffle(order);
      double loss_sum = 0.0;
      size_t loss_n = 0;
      size_t in_batch = 0;
      opt.zero_grad();
      for (size_t oi = 0; oi < order.size(); ++oi) {
        const TokenSequence& x = corpus[order[oi]];
        long t = static_cast<long>(x.size());
        TokenSequence input = x;
        std::vector<int> sel_rows, targets;
        for (long i = 0; i < t; ++i) {
          if (rng.uniform() < cfg_.mask_prob) sel_rows.push_back(static_cast<int>(i));
        }
        if (sel_rows.empty()) sel_rows.push_back(rng.uniform_int(0, static_cast<int>(t) - 1));
        for (int r : sel_rows) {
          targets.push_back(x.ids[static_cast<size_t>(r)]);
          double u = rng.uniform();
          if (u < 0.8) {
            input.ids[static_cast<size_t>(r)] = mask_token_id;
          } else if (u < 0.9 && vocab_size_ > first_regular) {
            input.ids[static_cast<size_t>(r)] = rng.uniform_int(first_regular, vocab_size_ - 1);
          }  // else keep the original token
        }
        ad::Var loss = ad::cross_entropy_rows(logits_var(input), targets, sel_rows);
        loss_sum += loss->value(0, 0);
        ++loss_n;
        size_t batch_n = std::min<size_t>(static_cast<size_t>(cfg_.batch), order.size() - (oi - in_batch));
        ad::backward(ad::smul(loss, 1.0 / static_cast<double>(batch_n)));
        if (++in_batch == batch_n) {
          opt.step();
          opt.zero_grad();
          in_batch = 0;
        }
      }
      epoch_losses.push_back(loss_sum / static_cast<double>(loss_n));
    }
    return epoch_losses;
  }

  // Deep, independent copy.
  MaskedLanguageModel clone() const {
    MaskedLanguageModel copy(vocab_size_, cfg_, init_seed_);
    for (size_t g = 0; g < groups_.size(); ++g) {
      for (size_t p = 0; p < groups_[g].params.size(); ++p) {
        copy.groups_[g].params[p].var->value = groups_[g].params[p].var->value;
      }
    }
    return copy;
  }

  uint64_t params_fingerprint() const { return nn::params_hash(groups_); }

  void save(const std::filesystem::path& path, uint64_t vocab_hash, uint64_t seed) const {
    std::map<std::string, std::string> meta{
        {"layers", std::to_string(cfg_.layers)}, {"width", std::to_string(cfg_.width)},
        {"heads", std::to_string(cfg_.heads)},   {"ffn", std::to_string(cfg_.ffn)},
        {"max_len", std::to_string(cfg_.max_len)}, {"vocab_size", std::to_string(vocab_size_)},
    };
    save_checkpoint(path, "mlm", meta, groups_, vocab_hash, seed);
  }

  static MaskedLanguageModel load(const std::filesystem::path& path, uint64_t* vocab_hash = nullptr,
                                  uint64_t* seed = nullptr) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.kind != "mlm") throw std::runtime_error(cat("expected mlm checkpoint, got ", ck.kind));
    MlmConfig cfg;
    cfg.layers = ck.meta_int("layers");
    cfg.width = ck.meta_int("width");
    cfg.heads = ck.meta_int("heads");
    cfg.ffn = ck.meta_int("ffn");
    cfg.max_len = ck.meta_int("max_len");
    MaskedLanguageModel m(ck.meta_int("vocab_size"), cfg, 0);
    restore_groups(m.groups_, ck);
    if (vocab_hash) *vocab_hash = ck.vocab_hash;
    if (seed) *seed = ck.seed;
    return m;
  }

 private:
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
    nn::ParamGroup out{"output_projection", {}};
    out_.collect(out, "output");
    groups_.push_back(std::move(out));
  }

  int vocab_size_;
  MlmConfig cfg_;
  uint64_t init_seed_;
  ad::Var tok_emb_, pos_emb_;
  std::vector<nn::EncoderLayer> layers_;
  nn::Linear out_;
  std::vector<nn::ParamGroup> groups_;
};

// Builds and pretrains an MLM in one step; deterministic for a fixed seed.
inline MaskedLanguageModel pretrain_mlm(const std::vector<TokenSequence>& corpus, int vocab_size,
                                        int mask_token_id, const MlmConfig& cfg, uint64_t seed,
                                        std::vector<double>* loss_history = nullptr) {
  MaskedLanguageModel model(vocab_size, cfg, seed);
  auto losses = model.pretrain(corpus, mask_token_id, Rng::mix(seed, 1));
  if (loss_history) *loss_history = losses;
  return model;
}

}  // namespace dilma
