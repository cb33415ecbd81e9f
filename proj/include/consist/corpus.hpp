#pragma once

#include <cmath>
#include <vector>

#include "consist/image.hpp"
#include "consist/rng.hpp"

namespace consist {

// Procedural "blob" class: one smooth colored shape on a linear gradient
// background. A subject is a fixed shape/color identity; its K variations
// move the blob and swap the background, which is the identity-vs-diversity
// split the fine-tuning study measures.
struct BlobSpec {
  double color[3] = {0.8, 0.3, 0.3};  // blob color
  double radius = 0.22;               // relative to image side
  double aspect = 1.0;                // x/y stretch of the blob
};

struct BlobPose {
  double cx = 0.5, cy = 0.5;          // blob center, relative coords
  double bg0[3] = {0.2, 0.2, 0.6};    // gradient endpoint colors
  double bg1[3] = {0.9, 0.9, 0.9};
  double angle = 0.0;                 // gradient direction
};

inline BlobSpec random_blob_spec(Rng& rng) {
  BlobSpec s;
  for (double& c : s.color) c = 0.15 + 0.7 * rng.uniform();
  s.radius = 0.15 + 0.15 * rng.uniform();
  s.aspect = 0.7 + 0.6 * rng.uniform();
  return s;
}

inline BlobPose random_blob_pose(Rng& rng) {
  BlobPose p;
  p.cx = 0.3 + 0.4 * rng.uniform();
  p.cy = 0.3 + 0.4 * rng.uniform();
  for (double& c : p.bg0) c = 0.25 + 0.5 * rng.uniform();
  for (double& c : p.bg1) c = 0.25 + 0.5 * rng.uniform();
  p.angle = 6.283185307179586 * rng.uniform();
  return p;
}

inline Image render_blob(const BlobSpec& spec, const BlobPose& pose, std::size_t side = 16) {
  Image img(side, side);
  double dx = std::cos(pose.angle), dy = std::sin(pose.angle);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      double u = (x + 0.5) / side, v = (y + 0.5) / side;
      double g = 0.5 + 0.5 * ((u - 0.5) * dx + (v - 0.5) * dy) / 0.7071067811865476;
      g = std::min(1.0, std::max(0.0, g));
      double ex = (u - pose.cx) / (spec.radius * spec.aspect);
      double ey = (v - pose.cy) / (spec.radius / spec.aspect);
      double mask = std::exp(-0.5 * (ex * ex + ey * ey));
      for (std::size_t c = 0; c < 3; ++c) {
        double bg = pose.bg0[c] * (1.0 - g) + pose.bg1[c] * g;
        img.at(x, y, c) = std::min(1.0, std::max(0.0, bg * (1.0 - mask) + spec.color[c] * mask));
      }
    }
  }
  return img;
}

inline std::vector<Image> make_class_corpus(std::size_t n, Rng& rng, std::size_t side = 16) {
  std::vector<Image> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    BlobSpec spec = random_blob_spec(rng);
    BlobPose pose = random_blob_pose(rng);
    out.push_back(render_blob(spec, pose, side));
  }
  return out;
}

// Subject identities are distinctive but compact: a saturated dominant color
// channel (recognizably atypical for the class prior, like a real
// personalization subject) at a small radius, so the background still
// dominates the image statistics the diversity metrics look at.
inline BlobSpec subject_blob_spec(Rng& rng) {
  BlobSpec s;
  std::size_t dominant = static_cast<std::size_t>(rng.uniform_int(0, 2));
  for (std::size_t c = 0; c < 3; ++c)
    s.color[c] = c == dominant ? 0.85 + 0.15 * rng.uniform() : 0.15 * rng.uniform();
  s.radius = 0.15 + 0.05 * rng.uniform();
  s.aspect = 0.7 + 0.6 * rng.uniform();
  return s;
}

// K pose/background variations of one fixed identity.
inline std::vector<Image> make_subject_set(std::uint64_t subject_seed, std::size_t k, std::size_t side = 16) {
  Rng id_rng(subject_seed);
  BlobSpec spec = subject_blob_spec(id_rng);
  Rng pose_rng = id_rng.fork(1);
  std::vector<Image> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(render_blob(spec, random_blob_pose(pose_rng), side));
  return out;
}

}  // namespace consist
