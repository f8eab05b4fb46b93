"""A scripted subsurface-mapping session against the in-process service.

Creates the two-column demo scene, dips at spread locations, composites
the cross-section map, and scores it against the hidden ground truth.
The browser UI in frontend/ drives the same pipeline over HTTP/WebSocket.
"""

import numpy as np

from dipme.mapping import export_map
from dipme.mce import MceConfig, Recognizer, TrainConfig, train
from dipme.preprocess import build_offset_jittered_dataset, normalize
from dipme.service import MappingService
from dipme.simulate import MEDIA_CLASSES, generate_dataset

print("training a compact recognizer (about a minute)...")
recs = generate_dataset(12, seed=0)
# random-offset windows match how the mapping nodes sample the depth range
ds = build_offset_jittered_dataset(recs, length=128, windows_per_recording=4, seed=0)
X, stats = normalize(ds.windows)
params, history = train(X, ds.labels, MceConfig(), TrainConfig(epochs=40, seed=0))
recognizer = Recognizer(params=params, norm=stats)
print(f"train accuracy: {history[-1]['val_acc']:.3f}")

svc = MappingService(recognizer, instant_sampling=True)
session = svc.create_session()  # hidden two-column, three-layer scene
print(f"scene: {session.scene.width} m wide, {session.scene.depth} m deep; hidden from the 'user'")

xs = (np.arange(8) + 0.5) * session.scene.width / 8
for x in xs:
    event, delta, trace = svc.dip(session.id, float(x))
    names = [MEDIA_CLASSES[int(np.argmax(p))] for _, p in event.nodes]
    print(f"dip at x={x:.2f} m -> nodes top..bottom: {names} ({len(delta)} cells updated)")

scene, agreement = svc.reveal(session.id)
print(f"\nconfident-cell agreement with ground truth: {agreement:.3f}")
png = export_map(session.map, "demo_map.png", format="png", pixel_scale=6)
print(f"wrote {png}")
