#include "iseg/geometry.hpp"

#include <algorithm>

namespace iseg {

BoxXYXY box_convert(const BoxCxCyWH& b) {
    return {b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0};
}

BoxCxCyWH box_convert(const BoxXYXY& b) {
    return {(b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0, b.x2 - b.x1, b.y2 - b.y1};
}

double box_iou(const BoxCxCyWH& a, const BoxCxCyWH& b) {
    const BoxXYXY p = box_convert(a), t = box_convert(b);
    const double iw = std::min(p.x2, t.x2) - std::max(p.x1, t.x1);
    const double ih = std::min(p.y2, t.y2) - std::max(p.y1, t.y1);
    const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
    const double uni = a.w * a.h + b.w * b.h - inter;
    check(uni > 0.0, "box_iou: zero-area union");
    return inter / uni;
}

double generalized_iou(const BoxCxCyWH& a, const BoxCxCyWH& b) {
    const BoxXYXY p = box_convert(a), t = box_convert(b);
    const double iw = std::min(p.x2, t.x2) - std::max(p.x1, t.x1);
    const double ih = std::min(p.y2, t.y2) - std::max(p.y1, t.y1);
    const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
    const double uni = a.w * a.h + b.w * b.h - inter;
    const double ew = std::max(p.x2, t.x2) - std::min(p.x1, t.x1);
    const double eh = std::max(p.y2, t.y2) - std::min(p.y1, t.y1);
    const double hull = ew * eh;
    check(uni > 0.0, "generalized_iou: zero-area union");
    check(hull > 0.0, "generalized_iou: zero-area enclosing box");
    return inter / uni - (hull - uni) / hull;
}

}  // namespace iseg
