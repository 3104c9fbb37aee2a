#pragma once

#include "concord/error.hpp"
#include "concord/grid.hpp"
#include "concord/label_volume.hpp"
#include "concord/nifti.hpp"
#include "concord/terminology.hpp"
#include "concord/cohort.hpp"
#include "concord/concordance.hpp"
#include "concord/report.hpp"
#include "concord/commands.hpp"
