/*
 * Copyright 2026 The stitchkit Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "stitch/embeddings.hpp"
#include "stitch/errors.hpp"
#include "stitch/tensor.hpp"

namespace stitch {

struct InfoNceOptions {
  double tau = 0.07;
  bool symmetric = false;
};

/// Contrastive loss between stitched rows and anchor rows; row i of each
/// side forms the positive pair. Cosine similarity over temperature,
/// mean over rows of -log softmax(logits_i)[i]. With `symmetric` the
/// column-wise loss is averaged in.
inline Tensor info_nce(const Tensor& stitched, const Tensor& anchors,
                       const InfoNceOptions& opt = {}) {
  if (!(opt.tau > 0.0)) throw ArgumentError("temperature must be positive");
  if (stitched.ndim() != 2 || anchors.ndim() != 2 || stitched.shape() != anchors.shape())
    throw DimensionError("info_nce: stitched " + shape_str(stitched.shape()) +
                         " vs anchors " + shape_str(anchors.shape()));
  const std::size_t b = stitched.rows();
  Tensor logits = scale(matmul(l2_normalize_rows(stitched), transpose(l2_normalize_rows(anchors))),
                        static_cast<real>(1.0 / opt.tau));
  Tensor diag = sum(mul(logits, Tensor::eye(b)));
  Tensor row_loss = sub(sum(log_sum_exp_rows(logits)), diag);
  Tensor total = row_loss;
  if (opt.symmetric) {
    Tensor col_loss = sub(sum(log_sum_exp_rows(transpose(logits))), diag);
    total = scale(add(row_loss, col_loss), real(0.5));
  }
  return scale(total, static_cast<real>(1.0 / double(b)));
}

/// items x candidates cosine similarities (constant, no graph).
inline Matrix<real> cosine_scores(const Tensor& items, const Tensor& candidates) {
  if (items.cols() != candidates.cols())
    throw DimensionError("cosine_scores: widths differ");
  Tensor s = matmul(l2_normalize_rows(items.detach()),
                    transpose(l2_normalize_rows(candidates.detach())));
  return Matrix<real>(s.rows(), s.cols(), std::vector<real>(s.data().begin(), s.data().end()));
}

/// Zero-based rank of the gold candidate: the number of candidates that
/// beat it. Ties go to the lower candidate index.
template <class T>
std::size_t gold_rank(std::span<const T> scores, std::size_t gold) {
  std::size_t rank = 0;
  const T g = scores[gold];
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (scores[j] > g || (scores[j] == g && j < gold)) ++rank;
  return rank;
}

inline double recall_at_k(const Matrix<real>& scores, std::span<const std::size_t> gold,
                          std::size_t k) {
  if (gold.size() != scores.rows) throw DimensionError("one gold index per item required");
  if (k == 0 || k > scores.cols) throw ArgumentError("k must lie in [1, candidates]");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.rows; ++i) {
    if (gold[i] >= scores.cols) throw RangeError("gold index outside candidate range");
    if (gold_rank(scores.row(i), gold[i]) < k) ++hits;
  }
  return scores.rows == 0 ? 0.0 : double(hits) / double(scores.rows);
}

/// Top-1 accuracy of matching each image to its best class prompt.
inline double classify_by_prompt(const Tensor& stitched_text_bank, const Tensor& image_bank,
                                 std::span<const std::size_t> gold) {
  return recall_at_k(cosine_scores(image_bank, stitched_text_bank), gold, 1);
}

/// Image-to-prompt matching with per-item candidate sets, e.g.
/// "QUESTION: ... ANSWER: ..." prompts. Reads out recall@k (k = 1 is
/// accuracy).
inline double vqa_qip_score(const std::vector<Tensor>& candidate_prompts,
                            const Tensor& image_bank, std::span<const std::size_t> gold,
                            std::size_t k = 1) {
  if (candidate_prompts.size() != image_bank.rows() || gold.size() != image_bank.rows())
    throw DimensionError("one candidate set and gold index per image required");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < candidate_prompts.size(); ++i) {
    if (candidate_prompts[i].rows() < 2) throw ArgumentError("need at least 2 candidates per item");
    auto s = cosine_scores(slice_rows(image_bank, i, i + 1), candidate_prompts[i]);
    if (gold[i] >= s.cols) throw RangeError("gold index outside candidate range");
    if (gold_rank(s.row(0), gold[i]) < k) ++hits;
  }
  return double(hits) / double(gold.size());
}

inline std::string qip_prompt(const std::string& question, const std::string& answer) {
  return "QUESTION: " + question + " ANSWER: " + answer;
}

inline std::string class_prompt(const std::string& cls) { return "This is a photo of a " + cls; }

// ---------------------------------------------------------------------------
// Evaluation tasks over bank rows
// ---------------------------------------------------------------------------

enum class TaskKind { Retrieval, Classification, VqaQip };

/// One item: an anchor (image) bank row, its candidate text rows, and the
/// gold position within them. With `shared_candidates` set, items carry no
/// candidates of their own.
struct EvalItem {
  std::size_t image_row = 0;
  std::vector<std::size_t> candidates;
  std::size_t gold = 0;
};

struct EvalTask {
  TaskKind kind = TaskKind::Retrieval;
  std::size_t k = 5;
  std::string name = "retrieval";
  std::vector<std::size_t> shared_candidates;
  std::vector<EvalItem> items;
};

/// Paired retrieval over the given rows: item i's gold is its own caption.
inline EvalTask retrieval_task(std::span<const std::size_t> rows, std::size_t k) {
  EvalTask t;
  t.kind = TaskKind::Retrieval;
  t.k = std::min(k, rows.size());
  t.shared_candidates.assign(rows.begin(), rows.end());
  for (std::size_t i = 0; i < rows.size(); ++i) t.items.push_back({rows[i], {}, i});
  return t;
}

inline void validate(const EvalTask& t) {
  if (t.items.empty()) throw ConfigError("eval task has no items");
  for (const auto& it : t.items) {
    const auto& cands = t.shared_candidates.empty() ? it.candidates : t.shared_candidates;
    if (it.gold >= cands.size()) throw ConfigError("gold index outside candidate range");
  }
  if (t.k == 0) throw ConfigError("eval task k must be positive");
}

/// Parses a task file. Either {"split": "val" | "train"} for paired
/// retrieval over a dataset split, or explicit rows:
/// {"kind": "classification", "k": 1, "candidates": [..],
///  "items": [{"image": r, "gold": g}, ...]} /
/// {"kind": "vqa-qip", "items": [{"image": r, "candidates": [..], "gold": g}]}
inline EvalTask eval_task_from_json(const nlohmann::json& j, const PairedEmbeddingDataset& data) {
  const std::string kind = j.value("kind", std::string("retrieval"));
  EvalTask t;
  if (j.contains("split")) {
    const auto split = j["split"].get<std::string>();
    if (split != "val" && split != "train") throw ConfigError("split must be val or train");
    t = retrieval_task(split == "val" ? data.val : data.train, j.value("k", std::size_t{5}));
  } else {
    t.kind = kind == "retrieval"        ? TaskKind::Retrieval
             : kind == "classification" ? TaskKind::Classification
             : kind == "vqa-qip"        ? TaskKind::VqaQip
                                        : throw ConfigError("unknown task kind '" + kind + "'");
    t.k = j.value("k", std::size_t{t.kind == TaskKind::Retrieval ? 5u : 1u});
    if (j.contains("candidates")) t.shared_candidates = j["candidates"].get<std::vector<std::size_t>>();
    for (const auto& ji : j.at("items")) {
      EvalItem it;
      it.image_row = ji.at("image").get<std::size_t>();
      if (ji.contains("candidates")) it.candidates = ji["candidates"].get<std::vector<std::size_t>>();
      it.gold = ji.at("gold").get<std::size_t>();
      t.items.push_back(std::move(it));
    }
  }
  t.name = j.value("name", kind);
  validate(t);
  for (const auto& it : t.items) {
    if (it.image_row >= data.count) throw ConfigError("eval item references a missing bank row");
    for (auto c : it.candidates)
      if (c >= data.count) throw ConfigError("eval candidate references a missing bank row");
  }
  for (auto c : t.shared_candidates)
    if (c >= data.count) throw ConfigError("eval candidate references a missing bank row");
  return t;
}

/// Scores one stitched pair on `task`. `stitch_text` maps modality-B rows
/// (a constant b x D_B tensor) into anchor space.
template <class StitchFn>
double evaluate_task(const EvalTask& task, const Matrix<real>& anchor_bank,
                     const Matrix<real>& text_bank, StitchFn&& stitch_text) {
  std::vector<std::size_t> image_rows, gold;
  for (const auto& it : task.items) {
    image_rows.push_back(it.image_row);
    gold.push_back(it.gold);
  }
  Tensor images = embed_batch(anchor_bank, image_rows);
  if (!task.shared_candidates.empty()) {
    Tensor texts = stitch_text(embed_batch(text_bank, task.shared_candidates));
    return recall_at_k(cosine_scores(images, texts), gold, std::min(task.k, texts.rows()));
  }
  std::vector<Tensor> per_item;
  per_item.reserve(task.items.size());
  for (const auto& it : task.items) per_item.push_back(stitch_text(embed_batch(text_bank, it.candidates)));
  return vqa_qip_score(per_item, images, gold, task.k);
}

}  // namespace stitch
