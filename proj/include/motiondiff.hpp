// Copyright 2026 The motiondiff Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

// Umbrella header.

#include "motiondiff/autograd.hpp"
#include "motiondiff/checkpoint.hpp"
#include "motiondiff/dataset.hpp"
#include "motiondiff/denoiser.hpp"
#include "motiondiff/diffusion.hpp"
#include "motiondiff/editor.hpp"
#include "motiondiff/error.hpp"
#include "motiondiff/evaluation.hpp"
#include "motiondiff/feature_extractor.hpp"
#include "motiondiff/log.hpp"
#include "motiondiff/metrics.hpp"
#include "motiondiff/model.hpp"
#include "motiondiff/motion.hpp"
#include "motiondiff/nn.hpp"
#include "motiondiff/optim.hpp"
#include "motiondiff/random.hpp"
#include "motiondiff/sampler.hpp"
#include "motiondiff/tensor.hpp"
#include "motiondiff/text_encoder.hpp"
#include "motiondiff/trainer.hpp"
