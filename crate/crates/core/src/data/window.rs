use serde::{Deserialize, Serialize};

use crate::data::stream::SensorStream;
use crate::error::{Error, Result};
use crate::task::Task;
use crate::tensor::Tensor;

/// A fixed-length multichannel segment. Its labels are used only to derive
/// pair similarity, never as training targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// `[channels, time]`
    pub data: Tensor<f32>,
    pub activity: u32,
    pub person: u32,
    pub attribute: Option<u32>,
    pub source: SourceSpan,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpan {
    pub stream_id: usize,
    pub start: usize,
}

impl Window {
    pub fn label(&self, task: Task) -> Option<u32> {
        match task {
            Task::Activity => Some(self.activity),
            Task::Person => Some(self.person),
            Task::Attribute => self.attribute,
        }
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seconds to a whole number of samples; the nudge keeps products such as
/// `1.28 * 50` from rounding down.
fn to_samples(seconds: f64, rate: f64) -> usize {
    (seconds * rate + 1e-9).floor().max(0.0) as usize
}

/// Number of window offsets `0, step, 2·step, …` that fit in `len` samples.
pub fn window_count(len: usize, window: usize, step: usize) -> usize {
    if len < window || step == 0 {
        0
    } else {
        (len - window) / step + 1
    }
}

/// Slides a window over the stream; windows whose labels change inside
/// them are discarded.
pub fn segment(
    stream: &SensorStream,
    window_seconds: f64,
    step_seconds: f64,
) -> Result<Vec<Window>> {
    let window = to_samples(window_seconds, stream.sample_rate_hz);
    let step = to_samples(step_seconds, stream.sample_rate_hz);
    segment_samples(stream, window, step)
}

pub fn segment_samples(stream: &SensorStream, window: usize, step: usize) -> Result<Vec<Window>> {
    if window == 0 {
        return Err(Error::Config("window is shorter than one sample".into()));
    }
    if step == 0 {
        return Err(Error::Config("window step is zero samples".into()));
    }
    let n_ch = stream.channels.len();
    let count = window_count(stream.len(), window, step);
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let start = k * step;
        let span = start..start + window;
        let uniform = |v: &[u32]| v[span.clone()].iter().all(|&x| x == v[start]);
        let attr_ok = stream.attribute.as_ref().is_none_or(|a| uniform(a));
        if !(uniform(&stream.activity) && uniform(&stream.person) && attr_ok) {
            continue;
        }
        let mut data = Vec::with_capacity(n_ch * window);
        for ch in &stream.channels {
            data.extend_from_slice(&ch[span.clone()]);
        }
        out.push(Window {
            data: Tensor::new(vec![n_ch, window], data)?,
            activity: stream.activity[start],
            person: stream.person[start],
            attribute: stream.attribute.as_ref().map(|a| a[start]),
            source: SourceSpan {
                stream_id: stream.stream_id,
                start,
            },
        });
    }
    Ok(out)
}

/// Concatenates windows back into one stream, in order.
pub fn windows_to_stream(
    windows: &[Window],
    sample_rate_hz: f64,
    channel_names: Vec<String>,
) -> SensorStream {
    let n_ch = channel_names.len();
    let mut channels = vec![Vec::new(); n_ch];
    let mut activity = Vec::new();
    let mut person = Vec::new();
    let has_attr = windows.iter().all(|w| w.attribute.is_some()) && !windows.is_empty();
    let mut attribute = Vec::new();
    for w in windows {
        let t = w.len();
        for (c, dst) in channels.iter_mut().enumerate() {
            dst.extend_from_slice(&w.data.data()[c * t..(c + 1) * t]);
        }
        activity.extend(std::iter::repeat_n(w.activity, t));
        person.extend(std::iter::repeat_n(w.person, t));
        if has_attr {
            attribute.extend(std::iter::repeat_n(w.attribute.unwrap(), t));
        }
    }
    SensorStream {
        stream_id: 0,
        sample_rate_hz,
        channel_names,
        channels,
        activity,
        person,
        attribute: has_attr.then_some(attribute),
    }
}
