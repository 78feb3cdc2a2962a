#include "common/image.h"

#include <algorithm>
#include <cmath>

#include "common/error.h"

namespace dscm {

namespace {
void require_same_shape(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width || a.size() != b.size())
    throw Error(ErrorCode::kInvalidArgument, "image shape mismatch");
}
}  // namespace

double mean_absolute_error(const Image& a, const Image& b) {
  require_same_shape(a, b);
  if (a.size() == 0) return 0.0;
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    acc += std::abs(static_cast<double>(a.pixels[i]) - b.pixels[i]);
  return acc / static_cast<double>(a.size());
}

double max_absolute_error(const Image& a, const Image& b) {
  require_same_shape(a, b);
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(a.pixels[i]) - b.pixels[i]));
  return worst;
}

}  // namespace dscm
