#pragma once

// Shallow residual encoder: RGB frame in [-1, 1] to a stride-8 feature map.
// 7x7 stride-2 stem, three residual stages at strides {2, 2, 1}, instance
// norm throughout, final 1x1 projection to C channels.

#include <string>

#include "ptrack/nn.hpp"
#include "ptrack/tensor.hpp"

namespace ptrack {

template <typename S>
struct ResBlock {
  Conv2d<S> conv1, conv2;
  Affine<S> in1, in2;
  Conv2d<S> skip_conv;
  Affine<S> skip_in;
  bool projected = false;

  ResBlock() = default;
  ResBlock(ParamStore<S>& ps, const std::string& name, int cin, int cout,
           int stride, Rng& rng)
      : conv1(ps, name + ".conv1", cin, cout, 3, stride, 1, rng),
        conv2(ps, name + ".conv2", cout, cout, 3, 1, 1, rng),
        in1(ps, name + ".in1", cout),
        in2(ps, name + ".in2", cout) {
    projected = stride != 1 || cin != cout;
    if (projected) {
      skip_conv = Conv2d<S>(ps, name + ".skip", cin, cout, 1, stride, 0, rng);
      skip_in = Affine<S>(ps, name + ".skip_in", cout);
    }
  }

  Var<S> operator()(Ctx<S>& c, Var<S> x) const {
    auto y = relu(c.g, row_norm(c.g, conv1(c, x), c.P(*in1.gamma), c.P(*in1.beta)));
    y = row_norm(c.g, conv2(c, y), c.P(*in2.gamma), c.P(*in2.beta));
    auto sk = projected
                  ? row_norm(c.g, skip_conv(c, x), c.P(*skip_in.gamma),
                             c.P(*skip_in.beta))
                  : x;
    return relu(c.g, add(c.g, y, sk));
  }
};

template <typename S>
struct Encoder {
  int channels = 128;
  static constexpr int kStride = 8;

  Conv2d<S> stem;
  Affine<S> stem_in;
  ResBlock<S> stage1, stage2, stage3;
  Conv2d<S> out_conv;

  Encoder() = default;
  Encoder(ParamStore<S>& ps, int C, Rng& rng) : channels(C) {
    const int c0 = C / 2, c1 = (3 * C) / 4;
    stem = Conv2d<S>(ps, "enc.stem", 3, c0, 7, 2, 3, rng);
    stem_in = Affine<S>(ps, "enc.stem_in", c0);
    stage1 = ResBlock<S>(ps, "enc.stage1", c0, c1, 2, rng);
    stage2 = ResBlock<S>(ps, "enc.stage2", c1, C, 2, rng);
    stage3 = ResBlock<S>(ps, "enc.stage3", C, C, 1, rng);
    out_conv = Conv2d<S>(ps, "enc.out", C, C, 1, 1, 0, rng);
  }

  // frame: [3, H, W] in [-1, 1]. Output [C, H/8, W/8].
  Var<S> operator()(Ctx<S>& c, Var<S> frame) const {
    const Shape& s = frame.shape();
    require(s.nd == 3 && s.d[0] == 3, "encoder: frame must be [3,H,W]");
    require(s.d[1] % kStride == 0 && s.d[2] % kStride == 0,
            "encoder: image dims must be divisible by " +
                std::to_string(kStride));
    auto y = relu(c.g, row_norm(c.g, stem(c, frame), c.P(*stem_in.gamma),
                                c.P(*stem_in.beta)));
    y = stage1(c, y);
    y = stage2(c, y);
    y = stage3(c, y);
    return out_conv(c, y);
  }
};

// Convert interleaved 8-bit RGB (HWC) or planar CHW bytes to [-1,1] planes.
template <typename S>
std::vector<S> normalize_rgb_chw(const unsigned char* chw, int h, int w) {
  std::vector<S> out(std::size_t(3) * h * w);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = S(chw[i]) * S(2.0 / 255.0) - S(1);
  return out;
}

}  // namespace ptrack
