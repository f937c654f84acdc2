#pragma once

#include "kantize/cost.hpp"
#include "kantize/dataset.hpp"
#include "kantize/eval.hpp"
#include "kantize/grid.hpp"
#include "kantize/io.hpp"
#include "kantize/layers.hpp"
#include "kantize/lut.hpp"
#include "kantize/matrix.hpp"
#include "kantize/plot.hpp"
#include "kantize/quant.hpp"
#include "kantize/spline_table.hpp"
#include "kantize/sweep.hpp"
#include "kantize/train.hpp"
