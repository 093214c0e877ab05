//! Layered models as flat vectors: layer layouts, contiguous segment plans,
//! and the flatten/unflatten conversions used for segment-wise communication.

use std::ops::Range;
use std::sync::Arc;

use crate::error::{SimError, SimResult};

/// Shape of one model layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub layer_index: usize,
    pub length: usize,
}

impl LayerShape {
    pub fn new(layer_index: usize, length: usize) -> Self {
        LayerShape {
            layer_index,
            length,
        }
    }
}

/// Ordered layer list plus precomputed element offsets.
///
/// Every [`ParamVector`] holds a shared handle to the layout it conforms to,
/// so layout agreement between vectors is a cheap pointer check in the
/// common case.
#[derive(Debug, PartialEq, Eq)]
pub struct ModelLayout {
    layers: Vec<LayerShape>,
    // offsets[i]..offsets[i+1] is the element range of layer i
    offsets: Vec<usize>,
}

impl ModelLayout {
    pub fn new(layers: Vec<LayerShape>) -> SimResult<Arc<Self>> {
        if layers.is_empty() {
            return Err(SimError::InvalidPlan("model has no layers".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.layer_index != i {
                return Err(SimError::InvalidPlan(format!(
                    "layer indices must be contiguous from 0; found {} at position {}",
                    layer.layer_index, i
                )));
            }
            if layer.length == 0 {
                return Err(SimError::InvalidPlan(format!("layer {i} has zero length")));
            }
        }
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        offsets.push(0usize);
        let mut total = 0;
        for layer in &layers {
            total += layer.length;
            offsets.push(total);
        }
        Ok(Arc::new(ModelLayout { layers, offsets }))
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn total_len(&self) -> usize {
        *self.offsets.last().expect("offsets never empty")
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    /// Element range of one layer in the flat vector.
    pub fn layer_range(&self, layer: usize) -> Range<usize> {
        self.offsets[layer]..self.offsets[layer + 1]
    }
}

/// Evenly sized synthetic layer list: `dim` elements spread over
/// `num_layers` layers, earlier layers taking the remainder.
pub fn synthetic_layers(dim: usize, num_layers: usize) -> SimResult<Vec<LayerShape>> {
    if num_layers == 0 || num_layers > dim {
        return Err(SimError::InvalidPlan(format!(
            "cannot split {dim} elements into {num_layers} layers"
        )));
    }
    let base = dim / num_layers;
    let extra = dim % num_layers;
    Ok((0..num_layers)
        .map(|i| LayerShape::new(i, base + usize::from(i < extra)))
        .collect())
}

/// Flat parameter or gradient vector conforming to a [`ModelLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Arc<ModelLayout>,
}

impl ParamVector {
    pub fn new(layout: Arc<ModelLayout>, values: Vec<f64>) -> SimResult<Self> {
        if values.len() != layout.total_len() {
            return Err(SimError::InvalidInput(format!(
                "value count {} does not match layout length {}",
                values.len(),
                layout.total_len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(SimError::InvalidInput("non-finite parameter value".into()));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros(layout: &Arc<ModelLayout>) -> Self {
        ParamVector {
            values: vec![0.0; layout.total_len()],
            layout: Arc::clone(layout),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values of one layer.
    pub fn layer(&self, layer: usize) -> &[f64] {
        &self.values[self.layout.layer_range(layer)]
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Contiguous partition of the layer list into communication segments.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPlan {
    // layer-index ranges, in order, disjoint, covering all layers
    segments: Vec<Range<usize>>,
    layout: Arc<ModelLayout>,
}

impl SegmentPlan {
    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn total_layers(&self) -> usize {
        self.layout.num_layers()
    }

    pub fn layout(&self) -> &Arc<ModelLayout> {
        &self.layout
    }

    pub fn segments(&self) -> &[Range<usize>] {
        &self.segments
    }

    /// Layer-index range of one segment.
    pub fn layer_range(&self, segment: usize) -> Range<usize> {
        self.segments[segment].clone()
    }

    /// Element range of one segment in the flat vector.
    pub fn element_range(&self, segment: usize) -> Range<usize> {
        let layers = &self.segments[segment];
        let start = self.layout.layer_range(layers.start).start;
        let end = self.layout.layer_range(layers.end - 1).end;
        start..end
    }

    pub fn segment_len(&self, segment: usize) -> usize {
        self.element_range(segment).len()
    }
}

/// One segment's values fused into a single flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatSegment {
    pub segment_index: usize,
    pub values: Vec<f64>,
}

/// Partitions layers into `num_segments` contiguous segments, balancing
/// element counts with a greedy left-to-right packer: each segment keeps
/// taking layers until it reaches the average of the elements still
/// unassigned, and always leaves at least one layer per remaining segment.
pub fn build_segment_plan(layers: &[LayerShape], num_segments: usize) -> SimResult<SegmentPlan> {
    let layout = ModelLayout::new(layers.to_vec())?;
    if num_segments == 0 || num_segments > layout.num_layers() {
        return Err(SimError::InvalidPlan(format!(
            "cannot split {} layers into {} segments",
            layout.num_layers(),
            num_segments
        )));
    }

    let total = layout.total_len();
    let num_layers = layout.num_layers();
    let mut segments = Vec::with_capacity(num_segments);
    let mut start = 0usize;
    let mut assigned = 0usize;
    for s in 0..num_segments {
        let remaining_segments = num_segments - s;
        if remaining_segments == 1 {
            segments.push(start..num_layers);
            break;
        }
        // leave one layer for each segment still to come
        let max_take = (num_layers - start) - (remaining_segments - 1);
        let target = (total - assigned) as f64 / remaining_segments as f64;
        let mut end = start;
        let mut acc = 0usize;
        while end < start + max_take {
            acc += layers[end].length;
            end += 1;
            if acc as f64 >= target {
                break;
            }
        }
        segments.push(start..end);
        assigned += acc;
        start = end;
    }

    Ok(SegmentPlan { segments, layout })
}

/// Fuses one segment's member layers into a single flat buffer
/// (concatenation in layer order).
pub fn flatten_tensors(
    params: &ParamVector,
    plan: &SegmentPlan,
    segment_index: usize,
) -> SimResult<FlatSegment> {
    if segment_index >= plan.num_segments() {
        return Err(SimError::InvalidSegment {
            index: segment_index,
            count: plan.num_segments(),
        });
    }
    if params.len() != plan.layout.total_len() {
        return Err(SimError::CorruptSegment(format!(
            "parameter vector length {} does not match plan length {}",
            params.len(),
            plan.layout.total_len()
        )));
    }
    Ok(FlatSegment {
        segment_index,
        values: params.values[plan.element_range(segment_index)].to_vec(),
    })
}

/// Splits a flat segment back into its member layers, order-preserving.
pub fn unflatten_tensors(flat: &FlatSegment, plan: &SegmentPlan) -> SimResult<Vec<Vec<f64>>> {
    if flat.segment_index >= plan.num_segments() {
        return Err(SimError::InvalidSegment {
            index: flat.segment_index,
            count: plan.num_segments(),
        });
    }
    let expected = plan.segment_len(flat.segment_index);
    if flat.values.len() != expected {
        return Err(SimError::CorruptSegment(format!(
            "segment {} carries {} values, plan expects {}",
            flat.segment_index,
            flat.values.len(),
            expected
        )));
    }
    let mut out = Vec::new();
    let mut cursor = 0usize;
    for layer in plan.layer_range(flat.segment_index) {
        let len = plan.layout.layers()[layer].length;
        out.push(flat.values[cursor..cursor + len].to_vec());
        cursor += len;
    }
    Ok(out)
}
