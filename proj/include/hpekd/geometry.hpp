// Copyright 2026 The hpekd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <string>

namespace hpekd {

/// Axis-aligned box in pixel coordinates, (x1, y1) inclusive corner and
/// (x2, y2) exclusive corner.
struct BoundingBox
{
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

    double width() const noexcept { return x2 - x1; }
    double height() const noexcept { return y2 - y1; }
    bool has_area() const noexcept { return width() > 0.0 && height() > 0.0; }
    double cx() const noexcept { return 0.5 * (x1 + x2); }
    double cy() const noexcept { return 0.5 * (y1 + y2); }

    bool operator==(const BoundingBox&) const = default;
};

/// Integer pixel rectangle (x1, y1, x2, y2), x2/y2 exclusive.
struct PixelRect
{
    int x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    int width() const noexcept { return x2 - x1; }
    int height() const noexcept { return y2 - y1; }
    bool operator==(const PixelRect&) const = default;
};

}   // hpekd
