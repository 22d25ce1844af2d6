/**
 * @file   warp.hpp
 * @brief  Flow-field warping of the guiding image.
 *
 * The warper predicts a flow field in normalized coordinates, where the
 * top-left pixel centre is (-1,-1) and the bottom-right one (+1,+1).
 * Adding the flow to the normalized pixel grid gives the sampling grid;
 * mapping that back to pixel units and bilinearly gathering from the guide
 * produces the warped guide. Channel 0 is the vertical (row) component,
 * channel 1 the horizontal (column) component.
 *
 * Samples outside the image read zeros: the hinge weights max(0, 1 - |d|)
 * only ever touch in-bounds pixels, so a missing tap contributes nothing.
 */
#pragma once

#include <cmath>

#include "ops.hpp"

namespace gwai {

/// Per-pixel 2-channel displacement [B, 2, H, W] in normalized units.
/// Values are unconstrained; nothing is clamped on construction.
template <class T>
struct FlowField {
    Tensor<T> values;

    FlowField() = default;
    explicit FlowField(Tensor<T> v) : values(std::move(v)) {
        if (values.rank() != 4 || values.dim(1) != 2)
            throw ShapeError("flow field must be [B,2,H,W], got " + shape_str(values.shape()));
    }
    std::size_t batch() const { return values.dim(0); }
    std::size_t height() const { return values.dim(2); }
    std::size_t width() const { return values.dim(3); }

    static FlowField zeros(std::size_t b, std::size_t h, std::size_t w) {
        return FlowField(Tensor<T>::zeros({b, 2, h, w}));
    }
};

/// delta(0,i,j) = 2i/(H-1) - 1, delta(1,i,j) = 2j/(W-1) - 1.
template <class T>
struct NormalizedGrid {
    Tensor<T> delta;  // [2, H, W]
    std::size_t height() const { return delta.dim(1); }
    std::size_t width() const { return delta.dim(2); }
};

template <class T>
NormalizedGrid<T> make_grid(std::size_t h, std::size_t w) {
    if (h < 2 || w < 2)
        throw ShapeError("make_grid: normalized grid needs h, w >= 2 (got " + std::to_string(h) + "x" +
                         std::to_string(w) + ")");
    Tensor<T> d(Shape{2, h, w});
    auto v = d.mutable_data();
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            v[i * w + j] = T(2) * static_cast<T>(i) / static_cast<T>(h - 1) - T(1);
            v[h * w + i * w + j] = T(2) * static_cast<T>(j) / static_cast<T>(w - 1) - T(1);
        }
    return {d};
}

/// Sampling grid rho = flow + delta, mapped back to pixel units:
/// row = (rho0 + 1)(H-1)/2, col = (rho1 + 1)(W-1)/2.
///
/// Evaluated as i + flow0 (H-1)/2 (the same affine map written so that a
/// zero flow lands exactly on the integer lattice).
template <class T>
Tensor<T> compose_sampling_grid(const FlowField<T>& flow, const NormalizedGrid<T>& grid) {
    const auto& f = flow.values;
    if (f.dim(2) != grid.height() || f.dim(3) != grid.width())
        throw ShapeError("compose_sampling_grid: flow " + shape_str(f.shape()) + " does not match grid " +
                         shape_str(grid.delta.shape()));
    const std::size_t B = f.dim(0), H = f.dim(2), W = f.dim(3), hw = H * W;
    const T sy = static_cast<T>(H - 1) / T(2), sx = static_cast<T>(W - 1) / T(2);
    Tensor<T> out(f.shape());
    auto o = out.mutable_data();
    auto in = f.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < hw; ++p) {
            // (delta + 1)(H-1)/2 is the lattice index itself.
            const auto i = static_cast<T>(p / W), j = static_cast<T>(p % W);
            o[(2 * b) * hw + p] = i + in[(2 * b) * hw + p] * sy;
            o[(2 * b + 1) * hw + p] = j + in[(2 * b + 1) * hw + p] * sx;
        }
    if (f.requires_grad()) {
        Tensor<T> jac(f.shape());
        auto jv = jac.mutable_data();
        for (std::size_t b = 0; b < B; ++b) {
            std::fill_n(jv.begin() + static_cast<std::ptrdiff_t>(2 * b * hw), hw, sy);
            std::fill_n(jv.begin() + static_cast<std::ptrdiff_t>((2 * b + 1) * hw), hw, sx);
        }
        out.attach("compose_sampling_grid", {f}, [jac](const Tensor<T>& g) { return std::vector<Tensor<T>>{mul(g, jac)}; });
    }
    return out;
}

/// Bilinear gather: out(b,c,i,j) = sum over the 4 neighbouring pixels (a,k)
/// of img(b,c,a,k) * max(0, 1 - |row - a|) * max(0, 1 - |col - k|), with
/// (row, col) = grid_px(b, :, i, j). Out-of-image taps contribute zero.
///
/// The cell is chosen as [ceil(x) - 1, ceil(x)], so at an integer
/// coordinate the derivative is the one-sided one from the left cell.
/// First-order.
template <class T>
Tensor<T> bilinear_sample(const Tensor<T>& img, const Tensor<T>& grid_px) {
    if (img.rank() != 4) throw ShapeError("bilinear_sample: image must be [B,C,H,W], got " + shape_str(img.shape()));
    if (grid_px.rank() != 4 || grid_px.dim(1) != 2 || grid_px.dim(0) != img.dim(0))
        throw ShapeError("bilinear_sample: grid must be [B,2,H',W'] with the image batch, got " +
                         shape_str(grid_px.shape()));
#ifndef NDEBUG
    for (T v : grid_px.data())
        if (std::isnan(v)) throw std::invalid_argument("bilinear_sample: NaN in sampling grid");
#endif
    const std::size_t B = img.dim(0), C = img.dim(1), H = img.dim(2), W = img.dim(3);
    const std::size_t OH = grid_px.dim(2), OW = grid_px.dim(3), ohw = OH * OW;
    Tensor<T> out(Shape{B, C, OH, OW});
    auto o = out.mutable_data();
    auto src = img.data();
    auto grid = grid_px.data();

    struct Cell {
        std::ptrdiff_t y0, x0;
        T wy0, wy1, wx0, wx1;
    };
    auto cell_of = [H, W](T ry, T rx) {
        Cell c{};
        const T cy = std::ceil(ry) - T(1), cx = std::ceil(rx) - T(1);
        // Cells wholly outside the image have no in-bounds taps.
        const T fy = std::clamp(cy, T(-2), static_cast<T>(H));
        const T fx = std::clamp(cx, T(-2), static_cast<T>(W));
        c.y0 = static_cast<std::ptrdiff_t>(fy);
        c.x0 = static_cast<std::ptrdiff_t>(fx);
        c.wy1 = ry - cy;
        c.wy0 = T(1) - c.wy1;
        c.wx1 = rx - cx;
        c.wx0 = T(1) - c.wx1;
        return c;
    };
    auto inside = [H, W](std::ptrdiff_t y, std::ptrdiff_t x) {
        return y >= 0 && x >= 0 && y < static_cast<std::ptrdiff_t>(H) && x < static_cast<std::ptrdiff_t>(W);
    };

    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < ohw; ++p) {
            const Cell cl = cell_of(grid[(2 * b) * ohw + p], grid[(2 * b + 1) * ohw + p]);
            const std::ptrdiff_t ys[2] = {cl.y0, cl.y0 + 1}, xs[2] = {cl.x0, cl.x0 + 1};
            const T wy[2] = {cl.wy0, cl.wy1}, wx[2] = {cl.wx0, cl.wx1};
            for (std::size_t c = 0; c < C; ++c) {
                const T* plane = src.data() + (b * C + c) * H * W;
                T acc = 0;
                for (int u = 0; u < 2; ++u)
                    for (int v = 0; v < 2; ++v) {
                        const T wgt = wy[u] * wx[v];
                        if (wgt != T(0) && inside(ys[u], xs[v]))
                            acc += plane[static_cast<std::size_t>(ys[u]) * W + static_cast<std::size_t>(xs[v])] * wgt;
                    }
                o[(b * C + c) * ohw + p] = acc;
            }
        }

    out.attach("bilinear_sample", {img, grid_px}, [img, grid_px, cell_of, inside, B, C, H, W, ohw](const Tensor<T>& g) {
        detail::first_order_only("bilinear_sample");
        Tensor<T> gimg, ggrid;
        if (img.requires_grad()) gimg = Tensor<T>(img.shape());
        if (grid_px.requires_grad()) ggrid = Tensor<T>(grid_px.shape());
        auto src = img.data();
        auto grid = grid_px.data();
        auto gv = g.data();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t p = 0; p < ohw; ++p) {
                const Cell cl = cell_of(grid[(2 * b) * ohw + p], grid[(2 * b + 1) * ohw + p]);
                const std::ptrdiff_t ys[2] = {cl.y0, cl.y0 + 1}, xs[2] = {cl.x0, cl.x0 + 1};
                const T wy[2] = {cl.wy0, cl.wy1}, wx[2] = {cl.wx0, cl.wx1};
                const T dwy[2] = {T(-1), T(1)}, dwx[2] = {T(-1), T(1)};
                T dy = 0, dx = 0;
                for (std::size_t c = 0; c < C; ++c) {
                    const T go = gv[(b * C + c) * ohw + p];
                    if (go == T(0)) continue;
                    const std::size_t base = (b * C + c) * H * W;
                    for (int u = 0; u < 2; ++u)
                        for (int v = 0; v < 2; ++v) {
                            if (!inside(ys[u], xs[v])) continue;
                            const std::size_t idx =
                                base + static_cast<std::size_t>(ys[u]) * W + static_cast<std::size_t>(xs[v]);
                            if (gimg.defined()) gimg.mutable_data()[idx] += go * wy[u] * wx[v];
                            dy += go * src[idx] * dwy[u] * wx[v];
                            dx += go * src[idx] * wy[u] * dwx[v];
                        }
                }
                if (ggrid.defined()) {
                    ggrid.mutable_data()[(2 * b) * ohw + p] = dy;
                    ggrid.mutable_data()[(2 * b + 1) * ohw + p] = dx;
                }
            }
        return std::vector<Tensor<T>>{gimg, ggrid};
    });
    return out;
}

/// Warped guide: gather from `guide` at flow + grid.
template <class T>
Tensor<T> warp_image(const Tensor<T>& guide, const FlowField<T>& flow) {
    if (guide.rank() != 4 || guide.dim(0) != flow.batch() || guide.dim(2) != flow.height() ||
        guide.dim(3) != flow.width())
        throw ShapeError("warp_image: guide " + shape_str(guide.shape()) + " does not match flow " +
                         shape_str(flow.values.shape()));
    const auto grid = make_grid<T>(flow.height(), flow.width());
    return bilinear_sample(guide, compose_sampling_grid(flow, grid));
}

}  // namespace gwai
