#include "bunet/mask.hpp"

namespace bunet {

BinaryMap threshold_map(const Tensor<float>& prob, float thr) {
  if (prob.rank() != 4 || prob.shape().n() != 1 || prob.shape().c() != 1)
    fail("threshold_map: expected a (1,1,H,W) map, got " + prob.shape().str());
  BinaryMap m(prob.shape().h(), prob.shape().w());
  const float* d = prob.data();
  for (std::size_t i = 0; i < m.v.size(); ++i) m.v[i] = d[i] > thr ? 1 : 0;
  return m;
}

BinaryMap extract_boundary(const BinaryMap& mask) {
  BinaryMap out(mask.h, mask.w);
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x) {
      if (!mask.at(y, x)) continue;
      // Survives 4-connected erosion only if every 4-neighbor exists and is set.
      const bool interior = y > 0 && y < mask.h - 1 && x > 0 && x < mask.w - 1 &&
                            mask.at(y - 1, x) && mask.at(y + 1, x) && mask.at(y, x - 1) &&
                            mask.at(y, x + 1);
      if (!interior) out.at(y, x) = 1;
    }
  return out;
}

BinaryMap tensor_to_map(const Tensor<float>& t) {
  if (t.rank() != 4 || t.shape().n() != 1 || t.shape().c() != 1)
    fail("tensor_to_map: expected a (1,1,H,W) map, got " + t.shape().str());
  BinaryMap m(t.shape().h(), t.shape().w());
  for (std::size_t i = 0; i < m.v.size(); ++i) m.v[i] = t.data()[i] > 0.5f ? 1 : 0;
  return m;
}

Tensor<float> map_to_tensor(const BinaryMap& m) {
  Tensor<float> t(Shape::nchw(1, 1, m.h, m.w));
  for (std::size_t i = 0; i < m.v.size(); ++i) t.data()[i] = m.v[i] ? 1.0f : 0.0f;
  return t;
}

Tensor<float> extract_boundary(const Tensor<float>& mask) {
  return map_to_tensor(extract_boundary(tensor_to_map(mask)));
}

}  // namespace bunet
