#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rfnet/common.hpp"
#include "rfnet/optim.hpp"
#include "rfnet/random.hpp"
#include "rfnet/rfnet.hpp"
#include "rfnet/serialize.hpp"
#include "rfnet/vocab.hpp"

namespace rfnet {

// Checkpoints are record files (see serialize.hpp) carrying a full training
// state: the model configuration echo, the vocabulary, every parameter tensor
// under its registry name, the optimizer moments and step count, the epoch
// counter, and the rng stream position. Loading reconstructs the exact state,
// so a resumed run replays the original trajectory bitwise.

namespace detail {

inline std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out += '\n';
    out += lines[i];
  }
  return out;
}

inline std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream ss(s);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const RFNetModel& model,
                            const Vocabulary& vocab, const Adam* adam,
                            std::uint64_t epoch, const Rng& rng) {
  const ModelConfig& c = model.config();
  RecordWriter w(path);
  w.str("format", "checkpoint");
  w.u64("version", 1);

  w.u64("config.hidden", c.hidden);
  w.u64("config.embed", c.embed);
  w.u64("config.att", c.att);
  w.u64("config.t1", c.t1);
  w.u64("config.t2", c.t2);
  w.u64("config.vocab", c.vocab);
  w.u64s("config.view_dims",
         std::vector<std::uint64_t>(c.view_dims.begin(), c.view_dims.end()));
  w.u64("config.freq_words", c.freq_words);
  w.u64("config.max_len", c.max_len);
  w.f64("config.dropout", c.dropout);
  w.f64("config.lambda", c.lambda);
  w.f64("config.lsr_eps", c.lsr_eps);
  w.str("config.ablation", ablation_name(c.ablation));

  w.str("vocabulary", detail::join_lines(vocab.to_lines()));

  const auto& named = model.named_params();
  w.u64("params.count", named.size());
  for (const auto& [name, t] : named) w.tensor("param." + name, t);

  w.u64("adam.present", adam ? 1 : 0);
  if (adam) {
    w.u64("adam.step_count", adam->step_count());
    for (std::size_t i = 0; i < named.size(); ++i) {
      Adam& a = const_cast<Adam&>(*adam);  // moment accessors are non-const
      w.f64s("adam.m." + named[i].first, a.moment1(i));
      w.f64s("adam.v." + named[i].first, a.moment2(i));
    }
  }

  w.u64("epoch", epoch);
  w.u64("rng.seed", rng.seed());
  w.u64("rng.counter", rng.counter());
  w.close();
}

struct LoadedCheckpoint {
  ModelConfig config;
  Vocabulary vocab;
  std::map<std::string, Tensor> params;
  bool has_adam = false;
  std::uint64_t adam_step = 0;
  std::map<std::string, std::vector<double>> adam_m, adam_v;
  std::uint64_t epoch = 0;
  Rng rng;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  RecordReader r(path);
  if (!r.has("format") || r.str("format") != "checkpoint")
    throw IoError("'" + path + "' is not a checkpoint file");
  if (r.u64("version") != 1)
    throw IoError("unsupported checkpoint version in '" + path + "'");

  LoadedCheckpoint ck;
  ModelConfig& c = ck.config;
  c.hidden = static_cast<std::size_t>(r.u64("config.hidden"));
  c.embed = static_cast<std::size_t>(r.u64("config.embed"));
  c.att = static_cast<std::size_t>(r.u64("config.att"));
  c.t1 = static_cast<std::size_t>(r.u64("config.t1"));
  c.t2 = static_cast<std::size_t>(r.u64("config.t2"));
  c.vocab = static_cast<std::size_t>(r.u64("config.vocab"));
  auto dims = r.u64s("config.view_dims");
  c.view_dims.assign(dims.begin(), dims.end());
  c.freq_words = static_cast<std::size_t>(r.u64("config.freq_words"));
  c.max_len = static_cast<std::size_t>(r.u64("config.max_len"));
  c.dropout = r.f64("config.dropout");
  c.lambda = r.f64("config.lambda");
  c.lsr_eps = r.f64("config.lsr_eps");
  c.ablation = ablation_from_name(r.str("config.ablation"));

  ck.vocab = Vocabulary::from_lines(detail::split_lines(r.str("vocabulary")));

  std::uint64_t n = r.u64("params.count");
  ck.has_adam = r.u64("adam.present") == 1;
  if (ck.has_adam) ck.adam_step = r.u64("adam.step_count");

  ck.epoch = r.u64("epoch");
  ck.rng = Rng(r.u64("rng.seed"), r.u64("rng.counter"));

  for (const std::string& rec : r.names()) {
    if (rec.rfind("param.", 0) == 0) {
      ck.params[rec.substr(6)] = r.tensor(rec);
    } else if (rec.rfind("adam.m.", 0) == 0) {
      ck.adam_m[rec.substr(7)] = r.f64s(rec);
    } else if (rec.rfind("adam.v.", 0) == 0) {
      ck.adam_v[rec.substr(7)] = r.f64s(rec);
    }
  }
  if (ck.params.size() != static_cast<std::size_t>(n))
    throw IoError("checkpoint parameter count mismatch in '" + path + "'");
  return ck;
}

// Copies the checkpoint's parameter values into a model built from the same
// configuration.
inline void restore_model(const LoadedCheckpoint& ck, RFNetModel& model) {
  const auto& named = model.named_params();
  if (named.size() != ck.params.size())
    throw IoError("checkpoint does not match the model's parameter registry");
  for (const auto& [name, t] : named) {
    auto it = ck.params.find(name);
    if (it == ck.params.end()) throw IoError("checkpoint missing parameter '" + name + "'");
    const Tensor& src = it->second;
    if (src.shape() != t.shape())
      throw IoError("checkpoint shape mismatch for parameter '" + name + "'");
    Tensor dst = t;  // shared handle
    for (std::size_t i = 0; i < src.size(); ++i) dst.at(i) = src.at(i);
  }
}

// Restores optimizer moments and step count. The Adam instance must have been
// constructed over the same model's parameter list (registry order).
inline void restore_adam(const LoadedCheckpoint& ck, const RFNetModel& model, Adam& adam) {
  if (!ck.has_adam) throw IoError("checkpoint holds no optimizer state");
  const auto& named = model.named_params();
  adam.set_step_count(ck.adam_step);
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto m = ck.adam_m.find(named[i].first);
    auto v = ck.adam_v.find(named[i].first);
    if (m == ck.adam_m.end() || v == ck.adam_v.end())
      throw IoError("checkpoint missing optimizer state for '" + named[i].first + "'");
    if (m->second.size() != adam.moment1(i).size())
      throw IoError("optimizer state size mismatch for '" + named[i].first + "'");
    adam.moment1(i) = m->second;
    adam.moment2(i) = v->second;
  }
}

}  // namespace rfnet
