#pragma once

#include <optional>
#include <span>
#include <vector>

#include "posedepth/tensor.hpp"

namespace posedepth {

// Elementwise -----------------------------------------------------------------

enum class ElementwiseKind { Add, Sub, Mul, Div, Neg, Abs, Exp, Log, PowScalar, Min, Max, Clamp };

/// Scalar arguments for the kinds that need them: `exponent` for PowScalar,
/// `lo`/`hi` for Clamp.
struct ElementwiseParams {
  double exponent = 1.0;
  double lo = 0.0;
  double hi = 1.0;
};

/// Dispatching form of the named functions below. Binary kinds require `b`.
Tensor elementwise(ElementwiseKind kind, const Tensor& a, const std::optional<Tensor>& b = std::nullopt,
                   ElementwiseParams params = {});

/// Trailing-dimension broadcasting: extents are aligned from the right and
/// must be equal or 1.
Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// Raises DomainError if any divisor is zero.
Tensor div(const Tensor& a, const Tensor& b);
/// Elementwise minimum; ties route the gradient to `a`.
Tensor minimum(const Tensor& a, const Tensor& b);
/// Elementwise maximum; ties route the gradient to `a`.
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
/// Subgradient 0 at x = 0.
Tensor abs(const Tensor& x);
Tensor exp(const Tensor& x);
/// Raises DomainError for x <= 0.
Tensor log(const Tensor& x);
Tensor pow(const Tensor& x, double exponent);
/// Gradient passes where lo <= x <= hi.
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& x);
Tensor operator+(const Tensor& a, double b);
Tensor operator+(double a, const Tensor& b);
Tensor operator-(const Tensor& a, double b);
Tensor operator-(double a, const Tensor& b);
Tensor operator*(const Tensor& a, double b);
Tensor operator*(double a, const Tensor& b);
Tensor operator/(const Tensor& a, double b);
Tensor operator/(double a, const Tensor& b);

// Activations -------------------------------------------------------------------

enum class ActivationKind { Elu, Sigmoid, Relu };

Tensor activation(ActivationKind kind, const Tensor& x);
Tensor relu(const Tensor& x);
Tensor elu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Linear algebra and layout ----------------------------------------------------

/// [m x k] * [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Rank-2 transpose.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
/// `length` entries of `axis` starting at `start`.
Tensor slice(const Tensor& x, Index axis, Index start, Index length);
Tensor concat(std::span<const Tensor> parts, Index axis);
Tensor concat(std::initializer_list<Tensor> parts, Index axis);
/// Cuts the gradient path.
Tensor detach(const Tensor& x);

// Reductions ----------------------------------------------------------------------

enum class ReduceKind { Sum, Mean, MinOverAxis };

/// Reduced axes are removed; reducing every axis yields shape [1].
/// MinOverAxis takes exactly one axis and breaks ties toward the lowest index.
Tensor reduce(ReduceKind kind, const Tensor& x, std::vector<Index> axes);
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::vector<Index> axes);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, std::vector<Index> axes);
Tensor min_over_axis(const Tensor& x, Index axis);

/// Softmax along `axis`, stabilized by max subtraction.
Tensor softmax(const Tensor& x, Index axis);

// Image operations (tensors laid out C x H x W) ----------------------------------

/// Cross-correlation. `weight` is [C_out x C_in x k x k] with odd k; `bias`
/// is [C_out] or absent.
Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias, Index stride = 1,
              Index padding = 0);

struct SampleResult {
  Tensor image;  ///< C x H_out x W_out
  Tensor valid;  ///< H_out x W_out of {0, 1}; constant
};

/// Bilinear sampling of `image` at `grid` ([2 x H_out x W_out], channel 0 = x,
/// channel 1 = y). Normalized coordinates: -1 is the first pixel center and
/// +1 the last. Out-of-range samples are clamped to the border and flagged
/// invalid. Differentiable w.r.t. image and grid.
SampleResult grid_sample_bilinear(const Tensor& image, const Tensor& grid);

/// Normalized pixel-center grid for which grid_sample_bilinear is the identity.
Tensor identity_grid(Index height, Index width);

/// Integer-factor bilinear upsampling with the same corner-aligned convention
/// as grid_sample_bilinear.
Tensor upsample_bilinear(const Tensor& x, Index factor);

/// Non-overlapping average pooling with a kh x kw window.
Tensor avg_pool2d(const Tensor& x, Index kernel_h, Index kernel_w);

/// Mean over a window x window neighbourhood with reflect padding (the edge
/// pixel is not repeated). Window must be odd and smaller than 2 * extent.
Tensor box_filter(const Tensor& x, Index window);

}  // namespace posedepth
