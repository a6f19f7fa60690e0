#pragma once

#include "dilma/autodiff.hpp"
#include "dilma/checkpoint.hpp"
#include "dilma/common.hpp"
#include "dilma/nn.hpp"
#include "dilma/rng.hpp"
#include "dilma/sampler.hpp"
#include "dilma/vocab.hpp"
#include "dilma/wer.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <vector>

namespace dilma {

struct EditPair {
  TokenSequence a, b;
  int true_wer = 0;
};

// Draws (sentence, perturbed sentence) pairs labelled with their exact
// word-level edit distance. Each pair applies 0-5 random word edits (insert /
// delete / substitute, uniform) to a base sentence; the label is the exact
// distance, which can be smaller than the number of edits applied.
inline std::vector<EditPair> generate_pairs(const std::vector<TokenSequence>& corpus, int n,
                                            const Vocabulary& vocab, Rng& rng, int max_edits = 5,
                                            int max_len = 64) {
  if (corpus.empty()) throw std::invalid_argument("generate_pairs: empty corpus");
  const int first_regular = 3;
  if (vocab.size() <= first_regular) throw std::invalid_argument("generate_pairs: vocabulary has no regular tokens");
  auto random_token = [&]() { return rng.uniform_int(first_regular, vocab.size() - 1); };

  std::vector<EditPair> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const TokenSequence& base = corpus[rng.index(corpus.size())];
    TokenSequence edited = base;
    int edits = rng.uniform_int(0, max_edits);
    for (int e = 0; e < edits; ++e) {
      int len = static_cast<int>(edited.size());
      int op = rng.uniform_int(0, 2);
      if (op == 0 && len >= max_len) op = 2;  // cannot insert past max length
      if (op == 1 && len <= 1) op = 2;        // cannot delete the last token
      if (op == 0) {
        int pos = rng.uniform_int(0, len);
        edited.ids.insert(edited.ids.begin() + pos, random_token());
      } else if (op == 1) {
        int pos = rng.uniform_int(0, len - 1);
        edited.ids.erase(edited.ids.begin() + pos);
      } else {
        int pos = rng.uniform_int(0, len - 1);
        edited.ids[static_cast<size_t>(pos)] = random_token();
      }
    }
    EditPair pair;
    pair.true_wer = wer(base, edited);
    pair.a = base;
    pair.b = std::move(edited);
    out.push_back(std::move(pair));
  }
  return out;
}

inline void save_pairs(const std::filesystem::path& path, const std::vector<EditPair>& pairs) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error(cat("cannot write pair cache: ", path.string()));
  for (const auto& p : pairs) {
    nlohmann::json j{{"a", p.a.ids}, {"b", p.b.ids}, {"wer", p.true_wer}};
    os << j.dump() << "\n";
  }
}

inline std::vector<EditPair> load_pairs(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(cat("cannot open pair cache: ", path.string()));
  std::vector<EditPair> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(cat("malformed pair cache at line ", line_no, ": ", e.what()));
    }
    EditPair p;
    p.a.ids = j.at("a").get<std::vector<int>>();
    p.b.ids = j.at("b").get<std::vector<int>>();
    p.true_wer = j.at("wer").get<int>();
    out.push_back(std::move(p));
  }
  return out;
}

struct DeepLevConfig {
  int embed = 64;
  int encoding = 128;  // l: dense representation length
  int head_hidden = 128;
  int epochs = 2;
  int batch = 16;
  double lr = 1e-3;
};

// Differentiable edit-distance surrogate. A shared window-3 convolutional
// encoder mean-pools each sequence into a dense vector z; the regression head
// reads (z_a, z_b, |z_a - z_b|, z_a * z_b) and predicts the WER. Predictions
// are clamped at zero.
class DeepLevenshtein {
 public:
  DeepLevenshtein(int vocab_size, const DeepLevConfig& cfg, uint64_t seed)
      : vocab_size_(vocab_size), cfg_(cfg) {
    Rng rng(seed);
    emb_ = ad::leaf(nn::gaussian(vocab_size, cfg.embed, 0.1, rng));
    conv_ = nn::Linear::init(3 * cfg.embed, cfg.encoding, rng);
    h1_ = nn::Linear::init(4 * cfg.encoding, cfg.head_hidden, rng);
    h2_ = nn::Linear::init(cfg.head_hidden, 1, rng);
    build_groups();
  }

  int vocab_size() const { return vocab_size_; }
  const DeepLevConfig& cfg() const { return cfg_; }
  const std::vector<nn::ParamGroup>& groups() const { return groups_; }

  ad::Var encode_embedded(const ad::Var& x) const {
    return ad::mean_rows(ad::relu_(conv_(ad::neighbor_concat3(x))));
  }

  ad::Var encode_hard(const TokenSequence& x) const {
    if (x.empty()) throw std::invalid_argument("deeplev: empty sequence");
    return encode_embedded(ad::gather_rows(emb_, x.ids));
  }

  ad::Var encode_relaxed(const ad::Var& rows) const {
    if (rows->cols() != vocab_size_) {
      throw std::invalid_argument(cat("deeplev: relaxed input has ", rows->cols(),
                                      " columns, vocabulary needs ", vocab_size_));
    }
    return encode_embedded(ad::matmul(rows, emb_));
  }

  // Raw regression output (no clamp); training target space.
  ad::Var head(const ad::Var& za, const ad::Var& zb) const {
    ad::Var feats = ad::hcat({za, zb, ad::abs_(ad::sub(za, zb)), ad::mul(za, zb)});
    return h2_(ad::relu_(h1_(feats)));
  }

  ad::Var distance_var(const ad::Var& za, const ad::Var& zb) const {
    return ad::relu_(head(za, zb));
  }

  double distance(const TokenSequence& candidate, const TokenSequence& reference) const {
    return distance_var(encode_hard(candidate), encode_hard(reference))->value(0, 0);
  }

  double distance(const RelaxedSequence& candidate, const TokenSequence& reference) const {
    return distance_var(encode_relaxed(ad::constant(candidate.rows)), encode_hard(reference))
        ->value(0, 0);
  }

  // Differentiable with respect to the relaxed candidate rows.
  ad::Var distance_relaxed(const ad::Var& rows, const TokenSequence& reference) const {
    return distance_var(encode_relaxed(rows), encode_hard(reference));
  }

  // L2 regression on (prediction - true_wer)^2; returns mean loss per epoch.
  std::vector<double> train(const std::vector<EditPair>& pairs, uint64_t seed) {
    if (static_cast<int>(pairs.size()) < cfg_.batch) {
      throw std::invalid_argument(cat("train_deeplev: ", pairs.size(),
                                      " pairs is fewer than one batch of ", cfg_.batch));
    }
    return run_train(pairs, seed);
  }

  uint64_t params_fingerprint() const { return nn::params_hash(groups_); }

  void save(const std::filesystem::path& path, uint64_t vocab_hash, uint64_t seed) const {
    std::map<std::string, std::string> meta{
        {"embed", std::to_string(cfg_.embed)},
        {"encoding", std::to_string(cfg_.encoding)},
        {"head_hidden", std::to_string(cfg_.head_hidden)},
        {"vocab_size", std::to_string(vocab_size_)},
    };
    save_checkpoint(path, "deeplev", meta, groups_, vocab_hash, seed);
  }

  static DeepLevenshtein load(const std::filesystem::path& path, uint64_t* vocab_hash = nullptr) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.kind != "deeplev") throw std::runtime_error(cat("expected deeplev checkpoint, got ", ck.kind));
    DeepLevConfig cfg;
    cfg.embed = ck.meta_int("embed");
    cfg.encoding = ck.meta_int("encoding");
    cfg.head_hidden = ck.meta_int("head_hidden");
    DeepLevenshtein m(ck.meta_int("vocab_size"), cfg, 0);
    restore_groups(m.groups_, ck);
    if (vocab_hash) *vocab_hash = ck.vocab_hash;
    return m;
  }

 private:
  std::vector<double> run_train(const std::vector<EditPair>& pairs, uint64_t seed) {
    Rng rng(seed);
    nn::Adam opt(nn::flatten(groups_), cfg_.lr);
    std::vector<size_t> order(pairs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<double> epoch_losses;
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      rng.shuffle(order);
      double loss_sum = 0.0;
      size_t in_batch = 0;
      opt.zero_grad();
      for (size_t oi = 0; oi < order.size(); ++oi) {
        const EditPair& p = pairs[order[oi]];
        ad::Var pred = head(encode_hard(p.a), encode_hard(p.b));
        ad::Var err = ad::add_scalar(pred, -static_cast<double>(p.true_wer));
        ad::Var loss = ad::mul(err, err);
        loss_sum += loss->value(0, 0);
        size_t batch_start = oi - in_batch;
        size_t batch_n = std::min<size_t>(static_cast<size_t>(cfg_.batch), order.size() - batch_start);
        ad::backward(ad::smul(loss, 1.0 / static_cast<double>(batch_n)));
        if (++in_batch == batch_n) {
          opt.step();
          opt.zero_grad();
          in_batch = 0;
        }
      }
      epoch_losses.push_back(loss_sum / static_cast<double>(pairs.size()));
    }
    return epoch_losses;
  }

  void build_groups() {
    groups_.clear();
    nn::ParamGroup emb{"embedding", {}};
    emb.params.push_back({"token_embedding", emb_});
    groups_.push_back(std::move(emb));
    nn::ParamGroup enc{"encoder", {}};
    conv_.collect(enc, "conv");
    groups_.push_back(std::move(enc));
    nn::ParamGroup head{"head", {}};
    h1_.collect(head, "h1");
    h2_.collect(head, "h2");
    groups_.push_back(std::move(head));
  }

  int vocab_size_;
  DeepLevConfig cfg_;
  ad::Var emb_;
  nn::Linear conv_, h1_, h2_;
  std::vector<nn::ParamGroup> groups_;
};

inline DeepLevenshtein train_deeplev(const std::vector<EditPair>& pairs, int vocab_size,
                                     const DeepLevConfig& cfg, uint64_t seed,
                                     std::vector<double>* loss_history = nullptr) {
  DeepLevenshtein model(vocab_size, cfg, seed);
  auto losses = model.train(pairs, Rng::mix(seed, 1));
  if (loss_history) *loss_history = losses;
  return model;
}

}  // namespace dilma
