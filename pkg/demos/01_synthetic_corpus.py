# Synthetic clips where the face alone is not enough.
#
# Every clip is a short video: a small "face" square in the middle of a larger
# frame, surrounded by a coloured "scene".  Half the clips are ambiguous: two
# emotions (happy/fear, sad/surprise) share one face pattern, and only the
# scene's polarity tells them apart.
#
#   python3 demos/01_synthetic_corpus.py

import tempfile

import numpy as np

from ous.data import EMOTIONS, POLARITIES, Manifest, generate_corpus, latent_bayes_accuracy, load_clips, split_face_scene

from _small import SMALL

out = tempfile.mkdtemp(prefix="ous_corpus_")
manifest = generate_corpus(SMALL.data, out)
print(f"{len(manifest.clips)} clips written to {out}")

# %% What the manifest knows about each clip
for rec in manifest.clips[:5]:
    print(rec.clip_id, rec.split, EMOTIONS[rec.emotion], POLARITIES[rec.polarity], "ambiguous" if rec.ambiguous else "")

train = manifest.split("train")
print("train/val:", len(train), len(manifest.split("val")))
print("class counts:", np.bincount([r.emotion for r in train], minlength=len(EMOTIONS)))

# %% Splitting a clip into its two streams
clips = load_clips(out, manifest.clips[:2])
face, scene = split_face_scene(clips, SMALL.data.face_size)
print("clip", clips.shape, "-> face", face.shape, "scene", scene.shape)
print("scene pixels inside the face box are filled with the border mean:", scene[0, 0, 0, 8:24, 8:24].std() < 1e-6)

# %% How much can be known from each stream?
# The majority-vote rule over the generator's latent variables gives an upper
# bound on ambiguous-clip accuracy for any model that sees only those inputs.
print("ambiguous accuracy ceiling, face only :", latent_bayes_accuracy(SMALL.data, ("face",)))
print("ambiguous accuracy ceiling, face+scene:", latent_bayes_accuracy(SMALL.data, ("face", "scene")))

# %% The manifest round-trips through JSON on disk
assert Manifest.load(out) == manifest
