#pragma once

#include "iseg/tensor.hpp"

// Box algebra in plain doubles. Boxes live in normalized image coordinates;
// the differentiable GIoU loss over Tensors is ops::giou_loss_sum.

namespace iseg {

struct BoxCxCyWH {
    double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;
};

struct BoxXYXY {
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;
};

BoxXYXY box_convert(const BoxCxCyWH& b);
BoxCxCyWH box_convert(const BoxXYXY& b);

double box_iou(const BoxCxCyWH& a, const BoxCxCyWH& b);
double generalized_iou(const BoxCxCyWH& a, const BoxCxCyWH& b);

}  // namespace iseg
