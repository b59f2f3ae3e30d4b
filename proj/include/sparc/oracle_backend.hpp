#pragma once

// Seeded stand-in for a vision-language model, used for desk-scale runs and
// tests. It knows the ground truth of every registered sample:
//  - grounding requests are answered with the ground-truth boxes (or their
//    centers as points) displaced by Gaussian center noise whose standard
//    deviation is sigma_frac * half-diagonal * temperature / reference_temperature;
//  - reasoning requests are answered correctly with a probability that ramps
//    linearly with how much of the ground truth the supplied crops cover.
// All randomness derives from (config seed, request seed); the object is
// immutable after construction.

#include <map>
#include <string>
#include <vector>

#include "sparc/backend.hpp"

namespace sparc {

// Piecewise-linear accuracy: p_floor below a, p_ceil above b, linear between.
struct AnswerCurve {
  double p_floor = 0.25;
  double p_ceil = 0.95;
  double a = 0.2;
  double b = 0.8;

  double probability(double coverage) const;
  // Position on the ramp in [0, 1].
  double quality(double coverage) const;
  void validate() const;
};

struct OracleConfig {
  double sigma_frac = 0.15;
  double reference_temperature = 0.7;
  AnswerCurve curve;
  // When positive, evidence is discounted if the target spans fewer than
  // this many delivered pixels (longest side), and the base image alone
  // counts as full-coverage evidence at its own fidelity.
  double fidelity_px = 0.0;
  std::uint64_t seed = 0;
  Modality modality = Modality::kBox;

  void validate() const;
};

struct OracleTruth {
  std::string sample_id;
  ImageDims dims;
  std::vector<BoundingBox> gt_boxes;
  std::string letters;  // valid choice letters, e.g. "ABCD"
  char answer = 'A';
};

class OracleBackend : public Backend {
 public:
  OracleBackend(OracleConfig cfg, std::vector<OracleTruth> truths);

  CompletionResult complete(const ChatRequest& req) const override;
  std::string name() const override { return "oracle"; }
  std::optional<CoordSpace> box_space() const override {
    return CoordSpace::kPixel;
  }

  const OracleConfig& config() const { return cfg_; }

  // Evidence quality in [0, 1] the oracle assigns to a reasoning prompt with
  // the given crops. Exposed for tests.
  double evidence_quality(const OracleTruth& truth, const ImageRef& base,
                          std::span<const ImageRef* const> crops) const;

 private:
  ChatResponse localize(const ChatRequest& req, const OracleTruth& truth) const;
  ChatResponse answer(const ChatRequest& req, const OracleTruth& truth) const;

  OracleConfig cfg_;
  std::map<std::string, OracleTruth, std::less<>> truths_;
};

}  // namespace sparc
